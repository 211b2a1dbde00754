"""Guidance procedures: structured-response parsers, re-asks, degradation."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proverguide.clients import EndpointConfig, MockClient
from proverguide.guidance import (
    GuidanceEngine,
    GuidanceUnavailableError,
    parse_chosen_lemmas,
    parse_step_sections,
    sanitize_comment_markers,
)
from proverguide.runlog import MemorySink
from proverguide.tasks import (
    BudgetLedger,
    Lemma,
    SelectedLemma,
    LemmaSelection,
    SyntaxValidity,
    TheoremTask,
)
from proverguide.templates import TemplateSet

TASK = TheoremTask(
    name="toy",
    formal_statement="theorem toy (a b : Nat) : a + b = b + a",
    informal_statement="Addition of naturals commutes.",
)


def make_client(tmp_path, entries, name="script.jsonl"):
    path = tmp_path / name
    path.write_text("".join(json.dumps(e) + "\n" for e in entries), encoding="utf-8")
    return MockClient(EndpointConfig(role="worker", base_url=f"mock:{path}"))


def make_engine(tmp_path, reasoner_entries=None, worker_entries=None):
    templates = TemplateSet.load(None)
    reasoner = (
        make_client(tmp_path, reasoner_entries, "reasoner.jsonl")
        if reasoner_entries is not None
        else None
    )
    worker = (
        make_client(tmp_path, worker_entries, "worker.jsonl")
        if worker_entries is not None
        else None
    )
    return GuidanceEngine(templates, reasoner=reasoner, worker=worker)


def pool(*stmts):
    return [
        Lemma(
            binder_name=f"h{i}",
            statement_text=s,
            syntax_valid=SyntaxValidity.VALID,
        )
        for i, s in enumerate(stmts)
    ]


class TestChosenLemmasParser:
    def test_parses_final_section(self):
        text = (
            "LEMMA ANALYSIS:\nall of them look fine\n\n"
            "CHOSEN LEMMAS:\n\n"
            "have l_0 : a + b = b + a := by\n"
            "have l_1 : b + a = a + b := by\n"
        )
        assert parse_chosen_lemmas(text) == ["a + b = b + a", "b + a = a + b"]

    def test_missing_heading_returns_none(self):
        assert parse_chosen_lemmas("no structured output here") is None

    def test_heading_with_no_lines_is_empty_list(self):
        assert parse_chosen_lemmas("CHOSEN LEMMAS:\nnothing well formed") == []

    def test_last_heading_wins(self):
        text = (
            "CHOSEN LEMMAS:\nhave l_0 : old pick := by\n\n"
            "revised analysis...\n"
            "CHOSEN LEMMAS:\nhave l_0 : new pick := by\n"
        )
        assert parse_chosen_lemmas(text) == ["new pick"]

    def test_malformed_lines_skipped(self):
        text = (
            "CHOSEN LEMMAS:\n"
            "have l_0 : good one := by\n"
            "have broken : no index := by\n"
            "l_1 : missing have := by\n"
        )
        assert parse_chosen_lemmas(text) == ["good one"]


class TestStepSectionParser:
    def test_full_response(self):
        text = (
            "STEPS:\n"
            "l_0: the first claim\nProof: by arithmetic.\n"
            "l_1: the second claim\nProof: follows from l_0's bound.\n"
            "Final Proof: combine both bounds.\n"
        )
        proofs, final, warnings = parse_step_sections(text, count=2)
        assert proofs == {0: "by arithmetic.", 1: "follows from l_0's bound."}
        assert final == "combine both bounds."

    def test_missing_section_reported(self):
        text = "l_0: claim\nProof: fine.\nFinal Proof: done."
        proofs, final, _ = parse_step_sections(text, count=2)
        assert 1 not in proofs
        assert final == "done."

    def test_out_of_range_label_warned(self):
        text = "l_5: claim\nProof: irrelevant.\nFinal Proof: x."
        proofs, _, warnings = parse_step_sections(text, count=2)
        assert proofs == {}
        assert any("l_5" in w for w in warnings)

    def test_no_final_proof_is_none(self):
        proofs, final, _ = parse_step_sections("l_0: c\nProof: p.", count=1)
        assert proofs == {0: "p."}
        assert final is None


class TestSanitizer:
    def test_closes_and_opens_replaced(self):
        out = sanitize_comment_markers("end -/ and open /- mid")
        assert "-/" not in out and "/-" not in out

    def test_nested_overlap_terminates(self):
        out = sanitize_comment_markers("x -/- y /-/ z")
        assert "-/" not in out and "/-" not in out

    @settings(max_examples=300, deadline=None)
    @given(st.text(alphabet="-/ ab\n", max_size=40))
    def test_property_no_markers_survive(self, text):
        out = sanitize_comment_markers(text)
        assert "-/" not in out and "/-" not in out


class TestNlProof:
    def test_returns_scripted_text(self, tmp_path):
        engine = make_engine(tmp_path, reasoner_entries=[{"content": "proof text"}])
        ledger = BudgetLedger(total=4)
        out = engine.generate_nl_proof(TASK, ledger, MemorySink())
        assert out == "proof text"
        assert ledger.guidance_calls == 1
        assert ledger.consumed == 0

    def test_whitespace_then_content_reasks_once(self, tmp_path):
        engine = make_engine(
            tmp_path, reasoner_entries=[{"content": "   \n"}, {"content": "second"}]
        )
        out = engine.generate_nl_proof(TASK, BudgetLedger(total=4), MemorySink())
        assert out == "second"

    def test_two_empty_responses_error(self, tmp_path):
        engine = make_engine(
            tmp_path, reasoner_entries=[{"content": ""}, {"content": " "}]
        )
        with pytest.raises(GuidanceUnavailableError):
            engine.generate_nl_proof(TASK, BudgetLedger(total=4), MemorySink())

    def test_endpoint_down_maps_to_unavailable(self, tmp_path):
        engine = make_engine(tmp_path, reasoner_entries=[{"error": "boom"}])
        with pytest.raises(GuidanceUnavailableError):
            engine.generate_nl_proof(TASK, BudgetLedger(total=4), MemorySink())

    def test_missing_endpoint_is_unavailable(self, tmp_path):
        engine = make_engine(tmp_path)
        with pytest.raises(GuidanceUnavailableError):
            engine.generate_nl_proof(TASK, BudgetLedger(total=4), MemorySink())


class TestSummarize:
    def test_conforming_opener_no_warning(self, tmp_path):
        engine = make_engine(
            tmp_path,
            worker_entries=[{"content": "We want to show that a+b=b+a."}],
        )
        summary, warnings = engine.summarize_nl_proof(
            TASK, "long proof", BudgetLedger(total=4), MemorySink()
        )
        assert summary.startswith("We want to show that")
        assert warnings == []

    def test_nonconforming_opener_warned_not_fatal(self, tmp_path):
        engine = make_engine(
            tmp_path, worker_entries=[{"content": "Observe the symmetry."}]
        )
        summary, warnings = engine.summarize_nl_proof(
            TASK, "p", BudgetLedger(total=4), MemorySink()
        )
        assert summary == "Observe the symmetry."
        assert len(warnings) == 1

    def test_marker_sanitized(self, tmp_path):
        engine = make_engine(
            tmp_path,
            worker_entries=[{"content": "We have x -/ trailing."}],
        )
        summary, _ = engine.summarize_nl_proof(
            TASK, "p", BudgetLedger(total=4), MemorySink()
        )
        assert "-/" not in summary


class TestSelectLemmas:
    def _run(self, tmp_path, responses, stmts, k=5):
        engine = make_engine(tmp_path, worker_entries=responses)
        return engine.select_lemmas(
            TASK, "nl proof", pool(*stmts), k, BudgetLedger(total=4), MemorySink()
        )

    def test_three_matching_lines(self, tmp_path):
        response = (
            "CHOSEN LEMMAS:\n"
            "have l_0 : c > 0 := by\n"
            "have l_1 : a > 0 := by\n"
            "have l_2 : b > 0 := by\n"
        )
        selection, warnings = self._run(
            tmp_path, [{"content": response}], ("a > 0", "b > 0", "c > 0")
        )
        assert len(selection) == 3
        # response order, not pool order
        assert [s.lemma.normalized_statement for s in selection.items] == [
            "c > 0", "a > 0", "b > 0",
        ]
        assert [s.lemma.binder_name for s in selection.items] == ["l_0", "l_1", "l_2"]

    def test_overflow_truncated_to_k(self, tmp_path):
        stmts = tuple(f"P{i} > {i}" for i in range(7))
        response = "CHOSEN LEMMAS:\n" + "".join(
            f"have l_{i} : P{i} > {i} := by\n" for i in range(7)
        )
        selection, warnings = self._run(tmp_path, [{"content": response}], stmts, k=5)
        assert len(selection) == 5
        assert any("first 5" in w or "truncat" in w for w in warnings)

    def test_unmatched_statement_dropped_with_warning(self, tmp_path):
        response = (
            "CHOSEN LEMMAS:\n"
            "have l_0 : a > 0 := by\n"
            "have l_1 : invented nonsense := by\n"
        )
        selection, warnings = self._run(
            tmp_path, [{"content": response}], ("a > 0", "b > 0")
        )
        assert len(selection) == 1
        assert any("invented nonsense" in w for w in warnings)

    def test_missing_heading_reasks_then_empty(self, tmp_path):
        selection, warnings = self._run(
            tmp_path,
            [{"content": "rambling"}, {"content": "more rambling"}],
            ("a > 0",),
        )
        assert len(selection) == 0

    def test_selection_soundness_every_pick_from_pool(self, tmp_path):
        stmts = ("a > 0", "b > 0")
        response = (
            "CHOSEN LEMMAS:\n"
            "have l_0 : b  >  0 := by\n"  # whitespace variant still matches
        )
        selection, _ = self._run(tmp_path, [{"content": response}], stmts)
        pool_norms = {"a > 0", "b > 0"}
        assert all(
            s.lemma.normalized_statement in pool_norms for s in selection.items
        )

    def test_duplicate_pick_kept_once(self, tmp_path):
        response = (
            "CHOSEN LEMMAS:\n"
            "have l_0 : a > 0 := by\n"
            "have l_1 : a > 0 := by\n"
        )
        selection, warnings = self._run(
            tmp_path, [{"content": response}], ("a > 0", "b > 0")
        )
        assert len(selection) == 1


class TestInformalLemmaProofs:
    def _selection(self, *stmts):
        from proverguide.leansyntax import rename_binders

        lemmas = rename_binders(
            [
                Lemma(
                    binder_name=f"h{i}",
                    statement_text=s,
                    syntax_valid=SyntaxValidity.VALID,
                )
                for i, s in enumerate(stmts)
            ]
        )
        return LemmaSelection(
            items=tuple(SelectedLemma(index=i, lemma=l) for i, l in enumerate(lemmas))
        )

    def test_full_steps_response(self, tmp_path):
        engine = make_engine(
            tmp_path,
            worker_entries=[
                {
                    "content": (
                        "l_0: first\nProof: use arithmetic.\n"
                        "l_1: second\nProof: use the bound.\n"
                        "Final Proof: chain the two facts.\n"
                    )
                }
            ],
        )
        selection, warnings = engine.generate_informal_lemma_proofs(
            TASK, "whole proof", self._selection("a > 0", "b > 0"),
            BudgetLedger(total=4), MemorySink(),
        )
        assert selection.items[0].informal_proof == "use arithmetic."
        assert selection.items[1].informal_proof == "use the bound."
        assert selection.main_informal_proof == "chain the two facts."

    def test_missing_section_falls_back_to_nl_proof(self, tmp_path):
        engine = make_engine(
            tmp_path,
            worker_entries=[
                {"content": "l_0: only\nProof: fine.\nFinal Proof: done."},
                {"content": "l_0: only\nProof: fine.\nFinal Proof: done."},
            ],
        )
        selection, warnings = engine.generate_informal_lemma_proofs(
            TASK, "THE WHOLE NL PROOF", self._selection("a > 0", "b > 0"),
            BudgetLedger(total=4), MemorySink(),
        )
        assert selection.items[0].informal_proof == "fine."
        assert selection.items[1].informal_proof == "THE WHOLE NL PROOF"
        assert any("l_1" in w for w in warnings)

    def test_binder_mention_in_proof_logged(self, tmp_path):
        engine = make_engine(
            tmp_path,
            worker_entries=[
                {"content": "l_0: x\nProof: recall l_0 is positive.\nFinal Proof: f."}
            ],
        )
        selection, warnings = engine.generate_informal_lemma_proofs(
            TASK, "p", self._selection("a > 0"), BudgetLedger(total=4), MemorySink()
        )
        assert selection.items[0].informal_proof == "recall l_0 is positive."
        assert any("l_0" in w for w in warnings)

    def test_informal_texts_are_embed_safe(self, tmp_path):
        engine = make_engine(
            tmp_path,
            worker_entries=[
                {"content": "l_0: x\nProof: weird -/ marker.\nFinal Proof: also -/ here."}
            ],
        )
        selection, _ = engine.generate_informal_lemma_proofs(
            TASK, "p", self._selection("a > 0"), BudgetLedger(total=4), MemorySink()
        )
        assert "-/" not in selection.items[0].informal_proof
        assert "-/" not in selection.main_informal_proof


class TestLogging:
    def test_guidance_calls_recorded_with_raw_text(self, tmp_path):
        engine = make_engine(
            tmp_path, reasoner_entries=[{"content": "proof body", "latency_s": 2.5}]
        )
        ledger = BudgetLedger(total=4)
        sink = MemorySink()
        engine.generate_nl_proof(TASK, ledger, sink)
        assert len(sink.guidance_records) == 1
        rec = sink.guidance_records[0]
        assert rec["theorem"] == "toy"
        assert rec["task"] == "nl_proof"
        assert rec["seconds"] == 2.5
        assert sink.raw_responses[0]["response"] == "proof body"
        assert ledger.guidance_timings["nl_proof"] == 2.5


# -- parser totality fuzz -------------------------------------------------------

structured_ish = st.text(
    alphabet=st.sampled_from(
        list("abcl_: =byhaveProofFinalCHOSENLEMMAS\n0123456789 ")
    ),
    max_size=200,
)


@settings(max_examples=300, deadline=None)
@given(structured_ish)
def test_chosen_parser_total(text):
    result = parse_chosen_lemmas(text)
    assert result is None or isinstance(result, list)


@settings(max_examples=300, deadline=None)
@given(structured_ish, st.integers(min_value=1, max_value=5))
def test_steps_parser_total(text, count):
    proofs, final, warnings = parse_step_sections(text, count)
    assert set(proofs) <= set(range(count))
    assert final is None or isinstance(final, str)
