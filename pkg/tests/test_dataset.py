"""Dataset loading: JSONL parsing, stub stripping, and line-numbered errors."""

import pytest

from proverguide.dataset import (
    DatasetEntry,
    DatasetError,
    load_dataset,
    strip_proof_stub,
    to_tasks,
)


def write(tmp_path, text, name="bench.jsonl"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


VALID_THREE = """\
{"name": "add_comm_simple", "formal_statement": "theorem add_comm_simple (a b : Nat) : a + b = b + a := by sorry", "informal_statement": "Addition commutes."}
{"name": "sq_nonneg_real", "formal_statement": "theorem sq_nonneg_real (x : \\u211d) : x ^ 2 \\u2265 0 := by sorry"}
{"name": "custom_header", "formal_statement": "theorem custom_header : 1 = 1 := by sorry", "header": "import Mathlib.Tactic"}
"""


def test_load_valid_file(tmp_path):
    entries = load_dataset(write(tmp_path, VALID_THREE))
    assert [e.name for e in entries] == [
        "add_comm_simple",
        "sq_nonneg_real",
        "custom_header",
    ]
    # the `:= by sorry` stub is stripped on load
    assert entries[0].formal_statement == (
        "theorem add_comm_simple (a b : Nat) : a + b = b + a"
    )
    assert entries[0].informal_statement == "Addition commutes."
    assert entries[1].informal_statement == ""
    assert entries[2].header == "import Mathlib.Tactic"


def test_blank_lines_are_skipped(tmp_path):
    text = VALID_THREE.replace(
        '{"name": "sq_nonneg_real"', '\n\n{"name": "sq_nonneg_real"', 1
    )
    entries = load_dataset(write(tmp_path, text))
    assert len(entries) == 3


@pytest.mark.parametrize(
    "statement,stripped",
    [
        ("theorem t : 1 = 1 := by sorry", "theorem t : 1 = 1"),
        ("theorem t : 1 = 1 := by", "theorem t : 1 = 1"),
        ("theorem t : 1 = 1 := sorry", "theorem t : 1 = 1"),
        ("theorem t : 1 = 1 := by\n  sorry", "theorem t : 1 = 1"),
        ("theorem t : 1 = 1 := by sorry\n", "theorem t : 1 = 1"),
        # no stub: left untouched
        ("theorem t : 1 = 1", "theorem t : 1 = 1"),
    ],
)
def test_strip_proof_stub(statement, stripped):
    assert strip_proof_stub(statement) == stripped


def test_stub_with_real_proof_is_kept():
    # only trailing stubs are removed, never actual proof text
    text = "theorem t : 1 = 1 := by rfl"
    assert strip_proof_stub(text) == text


def test_to_task_uses_default_preamble(tmp_path):
    entries = load_dataset(write(tmp_path, VALID_THREE))
    tasks = to_tasks(entries, default_preamble="import Mathlib")
    assert tasks[0].preamble == "import Mathlib"
    assert tasks[1].preamble == "import Mathlib"
    # a per-entry header overrides the run default
    assert tasks[2].preamble == "import Mathlib.Tactic"


def test_header_can_be_empty_string_override(tmp_path):
    line = (
        '{"name": "t", "formal_statement": "theorem t : 1 = 1 := by sorry",'
        ' "header": ""}\n'
    )
    entries = load_dataset(write(tmp_path, line))
    assert entries[0].to_task("import Mathlib").preamble == ""


def test_invalid_json_reports_line(tmp_path):
    text = VALID_THREE + "{not json}\n"
    with pytest.raises(DatasetError, match="line 4: invalid JSON"):
        load_dataset(write(tmp_path, text))


def test_missing_name_reports_line(tmp_path):
    text = '{"formal_statement": "theorem t : 1 = 1"}\n'
    with pytest.raises(DatasetError, match="line 1: missing required field 'name'"):
        load_dataset(write(tmp_path, text))


def test_non_string_statement_reports_line(tmp_path):
    text = '{"name": "t", "formal_statement": 42}\n'
    with pytest.raises(
        DatasetError, match="line 1: field 'formal_statement' must be a non-empty"
    ):
        load_dataset(write(tmp_path, text))


def test_non_object_entry_reports_line(tmp_path):
    text = '["not", "an", "object"]\n'
    with pytest.raises(DatasetError, match="line 1: entry is not an object"):
        load_dataset(write(tmp_path, text))


def test_non_string_header_reports_line(tmp_path):
    text = '{"name": "t", "formal_statement": "theorem t : 1 = 1", "header": 3}\n'
    with pytest.raises(DatasetError, match="line 1: header must be a string"):
        load_dataset(write(tmp_path, text))


def test_duplicate_name_reports_both_lines(tmp_path):
    text = (
        '{"name": "t", "formal_statement": "theorem t : 1 = 1 := by sorry"}\n'
        '{"name": "u", "formal_statement": "theorem u : 2 = 2 := by sorry"}\n'
        '{"name": "t", "formal_statement": "theorem t : 3 = 3 := by sorry"}\n'
    )
    with pytest.raises(
        DatasetError, match=r"line 3: duplicate theorem name 't' \(first seen on line 1\)"
    ):
        load_dataset(write(tmp_path, text))


def test_statement_with_inner_sorry_is_invalid(tmp_path):
    # a sorry that is part of the statement itself (not a trailing stub)
    text = '{"name": "t", "formal_statement": "theorem t : sorry = 1 := by sorry"}\n'
    with pytest.raises(
        DatasetError, match="line 1: invalid statement for 't'.*contains sorry"
    ):
        load_dataset(write(tmp_path, text))


def test_statement_without_theorem_keyword_is_invalid(tmp_path):
    text = '{"name": "t", "formal_statement": "def t : Nat := 3"}\n'
    with pytest.raises(
        DatasetError, match="line 1: invalid statement for 't'.*keyword"
    ):
        load_dataset(write(tmp_path, text))


def test_unbalanced_statement_is_invalid(tmp_path):
    text = '{"name": "t", "formal_statement": "theorem t (a : Nat : a = a"}\n'
    with pytest.raises(DatasetError, match="unbalanced delimiters"):
        load_dataset(write(tmp_path, text))


def test_empty_file_is_an_error(tmp_path):
    with pytest.raises(DatasetError, match="contains no entries"):
        load_dataset(write(tmp_path, ""))


def test_missing_file_is_a_dataset_error(tmp_path):
    with pytest.raises(DatasetError, match="cannot read dataset"):
        load_dataset(str(tmp_path / "nope.jsonl"))


def test_entry_is_frozen():
    entry = DatasetEntry(name="t", formal_statement="theorem t : 1 = 1")
    with pytest.raises(AttributeError):
        entry.name = "u"
