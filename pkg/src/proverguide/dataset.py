"""Benchmark dataset loading.

Datasets are JSONL: one object per theorem with `name`,
`formal_statement`, optional `informal_statement` and optional `header`
(a per-theorem import preamble overriding the run-level one).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Dict, List, Optional

from proverguide.tasks import TheoremTask


class DatasetError(Exception):
    """Malformed dataset file or entry; message carries the line number."""


@dataclass(frozen=True)
class DatasetEntry:
    name: str
    formal_statement: str
    informal_statement: str = ""
    header: Optional[str] = None

    def to_task(self, default_preamble: str = "") -> TheoremTask:
        preamble = self.header if self.header is not None else default_preamble
        return TheoremTask(
            name=self.name,
            formal_statement=self.formal_statement,
            informal_statement=self.informal_statement,
            preamble=preamble,
        )


# Statement files commonly ship theorems as `... := by sorry` stubs; the
# pipeline needs the bare statement because it appends its own `:= by`.
_STUB_TAIL_RE = re.compile(r":=\s*(?:by\s+sorry|by|sorry)\s*$", re.DOTALL)


def strip_proof_stub(statement: str) -> str:
    text = statement.rstrip()
    match = _STUB_TAIL_RE.search(text)
    if match:
        text = text[: match.start()].rstrip()
    return text


def _parse_entry(obj: dict, lineno: int) -> DatasetEntry:
    if not isinstance(obj, dict):
        raise DatasetError(f"line {lineno}: entry is not an object")
    for key in ("name", "formal_statement"):
        if key not in obj:
            raise DatasetError(f"line {lineno}: missing required field {key!r}")
        if not isinstance(obj[key], str) or not obj[key].strip():
            raise DatasetError(f"line {lineno}: field {key!r} must be a non-empty string")
    informal = obj.get("informal_statement", "")
    if not isinstance(informal, str):
        raise DatasetError(f"line {lineno}: informal_statement must be a string")
    header = obj.get("header")
    if header is not None and not isinstance(header, str):
        raise DatasetError(f"line {lineno}: header must be a string")
    return DatasetEntry(
        name=obj["name"].strip(),
        formal_statement=strip_proof_stub(obj["formal_statement"]),
        informal_statement=informal,
        header=header,
    )


def load_dataset(path: str) -> List[DatasetEntry]:
    entries: List[DatasetEntry] = []
    seen: Dict[str, int] = {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"line {lineno}: invalid JSON: {exc}") from exc
                entry = _parse_entry(obj, lineno)
                if entry.name in seen:
                    raise DatasetError(
                        f"line {lineno}: duplicate theorem name {entry.name!r}"
                        f" (first seen on line {seen[entry.name]})"
                    )
                issues = entry.to_task().validate()
                if issues:
                    raise DatasetError(
                        f"line {lineno}: invalid statement for {entry.name!r}: "
                        + "; ".join(issues)
                    )
                seen[entry.name] = lineno
                entries.append(entry)
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path!r}: {exc}") from exc
    if not entries:
        raise DatasetError(f"dataset {path!r} contains no entries")
    return entries


def to_tasks(
    entries: List[DatasetEntry], default_preamble: str = ""
) -> List[TheoremTask]:
    return [entry.to_task(default_preamble) for entry in entries]
