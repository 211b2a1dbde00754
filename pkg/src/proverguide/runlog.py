"""Append-only JSONL run records: schemas, writers, replay.

Three files live in a run directory:

* ``attempts.jsonl``   — one line per budgeted prover call.
* ``guidance.jsonl``   — one line per guidance-model call (never budgeted);
  only the response hash is kept here, the raw text goes to
  ``guidance_raw.jsonl`` so the primary log stays compact.
* ``outcomes.jsonl``   — one line per finished theorem.

Records are buffered per theorem and committed in dataset order, so two
runs over the same inputs produce byte-identical files regardless of how
many workers interleaved, and a theorem's records only ever reach disk
once it is complete (which is what makes resume safe).
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

from proverguide.tasks import ProofAttempt, TheoremOutcome

ATTEMPT_FIELDS = (
    "theorem",
    "attempt_index",
    "stage",
    "prompt_sha256",
    "completion",
    "status",
    "contains_sorry",
    "gen_seconds",
    "verify_seconds",
)

GUIDANCE_FIELDS = ("theorem", "task", "seconds", "response_sha256")


class RunLogError(Exception):
    """Corrupt or inconsistent log records."""


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def attempt_record(theorem: str, attempt: ProofAttempt) -> dict:
    return {
        "theorem": theorem,
        "attempt_index": attempt.attempt_index,
        "stage": attempt.stage,
        "prompt_sha256": sha256_text(attempt.prompt_text),
        "completion": attempt.completion_text,
        "status": attempt.verification.status.value,
        "contains_sorry": attempt.verification.contains_sorry,
        "gen_seconds": attempt.gen_seconds,
        "verify_seconds": attempt.verification.elapsed,
    }


def guidance_record(theorem: str, task: str, seconds: float, response: str) -> dict:
    return {
        "theorem": theorem,
        "task": task,
        "seconds": seconds,
        "response_sha256": sha256_text(response),
    }


def outcome_record(outcome: TheoremOutcome) -> dict:
    return {
        "theorem": outcome.task_name,
        "solved": outcome.solved,
        "solving_attempt_index": outcome.solving_attempt_index,
        "consumed": outcome.consumed,
        "per_stage": dict(outcome.per_stage),
        "guidance_calls": outcome.guidance_calls,
        "guidance_timings": dict(outcome.guidance_timings),
        "phase_trace": list(outcome.phase_trace),
        "diagnostics": list(outcome.diagnostics),
        "final_proof": outcome.final_proof,
    }


def encode_line(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False) + "\n"


def read_jsonl(path: str) -> List[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise RunLogError(f"{path}:{lineno}: bad JSON ({exc})") from exc
    return records


class RecordSink:
    """Where a pipeline reports its records as they happen."""

    def attempt(self, theorem: str, attempt: ProofAttempt) -> None:
        raise NotImplementedError

    def guidance(
        self, theorem: str, task: str, seconds: float, response: str
    ) -> None:
        raise NotImplementedError


class NullSink(RecordSink):
    def attempt(self, theorem, attempt):
        pass

    def guidance(self, theorem, task, seconds, response):
        pass


class MemorySink(RecordSink):
    """Collects records in memory; used by tests and the log buffers."""

    def __init__(self):
        self.attempts: List[dict] = []
        self.guidance_records: List[dict] = []
        self.raw_responses: List[dict] = []

    def attempt(self, theorem, attempt):
        self.attempts.append(attempt_record(theorem, attempt))

    def guidance(self, theorem, task, seconds, response):
        self.guidance_records.append(
            guidance_record(theorem, task, seconds, response)
        )
        self.raw_responses.append(
            {
                "theorem": theorem,
                "task": task,
                "response_sha256": sha256_text(response),
                "response": response,
            }
        )


@dataclass
class _Buffer:
    sink: MemorySink = field(default_factory=MemorySink)
    outcome: Optional[dict] = None


class RunLogWriter:
    """Buffers records per theorem and commits them in dataset order.

    `begin(name)` hands out the sink a pipeline writes through;
    `complete(name, outcome)` seals the buffer.  A sealed buffer is
    flushed to disk as soon as every theorem before it (in the order
    given at construction) has been flushed, with the outcome line
    written last so an on-disk outcome implies a complete record set.
    """

    def __init__(self, out_dir: str, order: Sequence[str]):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self._order = list(order)
        self._position = {name: i for i, name in enumerate(self._order)}
        if len(self._position) != len(self._order):
            raise ValueError("duplicate theorem names in commit order")
        self._buffers: Dict[str, _Buffer] = {}
        self._next = 0
        self._lock = threading.Lock()
        self._files = {
            key: open(os.path.join(out_dir, key + ".jsonl"), "a", encoding="utf-8")
            for key in ("attempts", "guidance", "guidance_raw", "outcomes")
        }

    def begin(self, name: str) -> RecordSink:
        if name not in self._position:
            raise KeyError(f"theorem {name!r} not in this run's commit order")
        with self._lock:
            buf = self._buffers.setdefault(name, _Buffer())
        return buf.sink

    def complete(self, name: str, outcome: TheoremOutcome) -> None:
        with self._lock:
            buf = self._buffers.setdefault(name, _Buffer())
            buf.outcome = outcome_record(outcome)
            self._flush_ready()

    def _flush_ready(self) -> None:
        while self._next < len(self._order):
            name = self._order[self._next]
            buf = self._buffers.get(name)
            if buf is None or buf.outcome is None:
                return
            for rec in buf.sink.attempts:
                self._files["attempts"].write(encode_line(rec))
            for rec in buf.sink.guidance_records:
                self._files["guidance"].write(encode_line(rec))
            for rec in buf.sink.raw_responses:
                self._files["guidance_raw"].write(encode_line(rec))
            self._files["outcomes"].write(encode_line(buf.outcome))
            for fh in self._files.values():
                fh.flush()
            del self._buffers[name]
            self._next += 1

    def pending(self) -> List[str]:
        return self._order[self._next :]

    def close(self) -> None:
        with self._lock:
            stuck = self.pending()
            for fh in self._files.values():
                fh.close()
        if stuck and any(n in self._buffers for n in stuck):
            raise RuntimeError(
                f"run log closed with uncommitted theorems: {stuck[:3]}…"
            )


@dataclass(frozen=True)
class ReplayedLedger:
    """Counts reconstructed from persisted records."""

    consumed: int
    per_stage: Dict[str, int]
    guidance_calls: int
    guidance_timings: Dict[str, float]


def replay_ledger(
    attempt_records: Iterable[dict],
    guidance_records: Iterable[dict] = (),
    theorem: Optional[str] = None,
) -> ReplayedLedger:
    """Rebuild per-theorem (or whole-run) ledger counts from log records."""
    consumed = 0
    per_stage: Dict[str, int] = {}
    expected = 1
    for rec in attempt_records:
        if theorem is not None and rec["theorem"] != theorem:
            continue
        if theorem is not None and rec["attempt_index"] != expected:
            raise RunLogError(
                f"attempt indices not gapless for {theorem}:"
                f" saw {rec['attempt_index']}, expected {expected}"
            )
        expected += 1
        consumed += 1
        per_stage[rec["stage"]] = per_stage.get(rec["stage"], 0) + 1
    calls = 0
    timings: Dict[str, float] = {}
    for rec in guidance_records:
        if theorem is not None and rec["theorem"] != theorem:
            continue
        calls += 1
        timings[rec["task"]] = timings.get(rec["task"], 0.0) + rec["seconds"]
    return ReplayedLedger(consumed, per_stage, calls, timings)


def load_outcomes(out_dir: str) -> List[dict]:
    path = os.path.join(out_dir, "outcomes.jsonl")
    if not os.path.exists(path):
        return []
    return read_jsonl(path)


def load_attempts(out_dir: str) -> List[dict]:
    path = os.path.join(out_dir, "attempts.jsonl")
    if not os.path.exists(path):
        return []
    return read_jsonl(path)


def load_guidance(out_dir: str) -> List[dict]:
    path = os.path.join(out_dir, "guidance.jsonl")
    if not os.path.exists(path):
        return []
    return read_jsonl(path)


def compact_for_resume(out_dir: str) -> Dict[str, dict]:
    """Drop records of unfinished theorems; return completed outcomes.

    A theorem counts as completed iff it has an outcome line.  Because
    the writer commits outcomes last, records without an outcome belong
    to a run that crashed mid-theorem; those theorems rerun from scratch,
    so their stale partial records are rewritten away.
    """
    outcomes = {rec["theorem"]: rec for rec in load_outcomes(out_dir)}
    for key in ("attempts", "guidance", "guidance_raw"):
        path = os.path.join(out_dir, key + ".jsonl")
        if not os.path.exists(path):
            continue
        records = read_jsonl(path)
        kept = [rec for rec in records if rec["theorem"] in outcomes]
        if len(kept) != len(records):
            tmp = path + ".tmp"
            with open(tmp, "w", encoding="utf-8") as fh:
                for rec in kept:
                    fh.write(encode_line(rec))
            os.replace(tmp, path)
    return outcomes
