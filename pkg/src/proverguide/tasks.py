"""Domain types for the proving pipeline.

Everything here is plain data: theorem statements, extracted lemmas,
verification results, per-theorem budget accounting.  Parsing and
synthesis of Lean text lives in :mod:`proverguide.leansyntax`; network
and subprocess concerns live elsewhere.  All value types are frozen so
they can be shared freely between pipeline stages and threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Optional, Tuple


class SyntaxValidity(enum.Enum):
    """Tri-state result of the cheap elaboration check on a lemma statement."""

    UNCHECKED = "unchecked"
    VALID = "valid"
    INVALID = "invalid"


class VerificationStatus(enum.Enum):
    PROVED = "proved"
    FAILED = "failed"
    TIMEOUT = "timeout"
    TRANSPORT_ERROR = "transport_error"


class Provenance(enum.Enum):
    """How a lemma proof entered the proven set."""

    SALVAGED = "salvaged"
    LOOP_PROVED = "loop_proved"


# Stage labels used in attempt records.  Lemma stages are "lemma_<i>".
STAGE_INITIAL = "initial"
STAGE_MAIN_SKETCH = "main_sketch"
STAGE_FALLBACK = "fallback"

GUIDANCE_TASKS = ("nl_proof", "summary", "selection", "lemma_proofs")


def lemma_stage(index: int) -> str:
    return f"lemma_{index}"


def is_lemma_stage(stage: str) -> bool:
    prefix, _, tail = stage.partition("_")
    return prefix == "lemma" and tail.isdigit()


def lemma_stage_index(stage: str) -> int:
    if not is_lemma_stage(stage):
        raise ValueError(f"not a lemma stage label: {stage!r}")
    return int(stage.split("_", 1)[1])


@dataclass(frozen=True)
class TheoremTask:
    """One benchmark problem.

    `formal_statement` is the Lean theorem signature up to (and excluding)
    the `:=` token; `preamble` holds imports/opens to elaborate first.
    """

    name: str
    formal_statement: str
    informal_statement: str = ""
    preamble: str = ""

    def validate(self) -> list:
        """Return a list of contract violations (empty when well formed)."""
        from proverguide import leansyntax

        problems = []
        if not self.name.strip():
            problems.append("name is empty")
        if not self.formal_statement.strip():
            problems.append("formal_statement is empty")
        else:
            words = self.formal_statement.split()
            if not any(w in ("theorem", "lemma", "example") for w in words):
                problems.append(
                    "formal_statement has no theorem/lemma/example keyword"
                )
            if leansyntax.contains_sorry(self.formal_statement):
                problems.append("formal_statement contains sorry")
            if not leansyntax.balanced_delimiters(self.formal_statement):
                problems.append("formal_statement has unbalanced delimiters")
        return problems


@dataclass(frozen=True)
class NlGuidance:
    """Natural-language proof and its one-sentence-per-step summary.

    `degraded` marks guidance that fell back to empty text after the
    guidance endpoint failed or returned unusable output; the pipeline
    still runs, just without informal context.
    """

    full_proof: str
    summary: str
    degraded: bool = False

    def __post_init__(self):
        if "-/" in self.summary or "/-" in self.summary:
            raise ValueError("summary contains comment delimiters")
        if self.full_proof.strip() and not self.summary.strip():
            raise ValueError("non-empty proof requires a non-empty summary")


EMPTY_GUIDANCE = NlGuidance(full_proof="", summary="", degraded=True)


@dataclass(frozen=True)
class Lemma:
    """A `have` statement lifted out of prover output.

    `proof_texts` keeps every distinct recorded proof in first-seen order
    (used by salvage); `proof_text` is the first of them for convenience.
    `source_attempts` are the 1-based attempt indices that produced it.
    """

    binder_name: str
    statement_text: str
    proof_text: Optional[str] = None
    proof_texts: Tuple[str, ...] = ()
    source_attempts: frozenset = frozenset()
    pattern_binder: bool = False
    syntax_valid: SyntaxValidity = SyntaxValidity.UNCHECKED

    @property
    def normalized_statement(self) -> str:
        return " ".join(self.statement_text.split())

    @property
    def recorded_proofs(self) -> Tuple[str, ...]:
        if self.proof_texts:
            return self.proof_texts
        if self.proof_text is not None:
            return (self.proof_text,)
        return ()


@dataclass(frozen=True)
class SelectedLemma:
    """One slot of a selection: position, lemma, and its informal proof."""

    index: int
    lemma: Lemma
    informal_proof: str = ""


@dataclass(frozen=True)
class LemmaSelection:
    items: Tuple[SelectedLemma, ...]
    main_informal_proof: str = ""

    def __len__(self) -> int:
        return len(self.items)

    def lemmas(self) -> Tuple[Lemma, ...]:
        return tuple(it.lemma for it in self.items)

    def check(self, max_lemmas: int) -> None:
        """Raise ValueError unless this is a well-formed ordered selection."""
        if len(self.items) > max_lemmas:
            raise ValueError(
                f"selection has {len(self.items)} lemmas, cap is {max_lemmas}"
            )
        for pos, item in enumerate(self.items):
            if item.index != pos:
                raise ValueError(
                    f"selection indices not contiguous at position {pos}"
                )
            expected = f"l_{pos}"
            if item.lemma.binder_name != expected:
                raise ValueError(
                    f"lemma {pos} is named {item.lemma.binder_name!r},"
                    f" expected {expected!r}"
                )
            if item.lemma.syntax_valid is not SyntaxValidity.VALID:
                raise ValueError(
                    f"lemma {pos} entered selection without passing the"
                    " syntax check"
                )


@dataclass(frozen=True)
class ReplMessage:
    severity: str  # "error" | "warning" | "info"
    text: str
    line: int = 0
    column: int = 0


@dataclass(frozen=True)
class VerificationResult:
    status: VerificationStatus
    messages: Tuple[ReplMessage, ...] = ()
    contains_sorry: bool = False
    elapsed: float = 0.0

    @property
    def proved(self) -> bool:
        return self.status is VerificationStatus.PROVED

    def errors(self) -> Tuple[ReplMessage, ...]:
        return tuple(m for m in self.messages if m.severity == "error")


@dataclass(frozen=True)
class ProofAttempt:
    """One budgeted prover call: prompt, completion, and its verdict."""

    attempt_index: int  # 1-based, global across all stages of a theorem
    stage: str
    prompt_text: str
    completion_text: str
    proof_body: str  # tactic text extracted from the completion
    verification: VerificationResult
    gen_seconds: float = 0.0

    @property
    def proved(self) -> bool:
        return self.verification.proved


class BudgetExhaustedError(Exception):
    """Raised when an attempt would exceed the per-theorem call budget."""


class BudgetLedger:
    """Per-theorem accounting of prover calls and guidance timings.

    Verification-only work (lemma syntax checks, salvage, assembly) is
    deliberately not counted: the budget governs prover *generations*.
    """

    def __init__(self, total: int):
        if total < 1:
            raise ValueError("budget must be at least 1")
        self.total = total
        self.consumed = 0
        self.per_stage: dict = {}
        self.attempts: list = []
        self.guidance_calls = 0
        self.guidance_timings: dict = {}

    @property
    def remaining(self) -> int:
        return self.total - self.consumed

    def can_attempt(self) -> bool:
        return self.consumed < self.total

    def next_index(self) -> int:
        return self.consumed + 1

    def record_attempt(self, attempt: ProofAttempt) -> None:
        if self.consumed >= self.total:
            raise BudgetExhaustedError(
                f"budget of {self.total} prover calls already consumed"
            )
        if attempt.attempt_index != self.consumed + 1:
            raise ValueError(
                f"attempt index {attempt.attempt_index} out of order;"
                f" expected {self.consumed + 1}"
            )
        self.attempts.append(attempt)
        self.consumed += 1
        self.per_stage[attempt.stage] = self.per_stage.get(attempt.stage, 0) + 1

    def record_guidance(self, task: str, seconds: float) -> None:
        if task not in GUIDANCE_TASKS:
            raise ValueError(f"unknown guidance task {task!r}")
        self.guidance_calls += 1
        self.guidance_timings[task] = (
            self.guidance_timings.get(task, 0.0) + seconds
        )


@dataclass(frozen=True)
class ProvenLemma:
    proof_text: str
    provenance: Provenance


class ProvenSet:
    """Monotone map from selection index to a verified lemma proof."""

    def __init__(self, size: int):
        self.size = size
        self._entries: dict = {}

    def __contains__(self, index: int) -> bool:
        return index in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, index: int) -> Optional[ProvenLemma]:
        return self._entries.get(index)

    def proof_for(self, index: int) -> str:
        return self._entries[index].proof_text

    def add(self, index: int, proof_text: str, provenance: Provenance) -> None:
        if not 0 <= index < self.size:
            raise IndexError(f"lemma index {index} outside selection of {self.size}")
        if index in self._entries:
            raise ValueError(f"lemma {index} already has a verified proof")
        from proverguide import leansyntax

        later = [f"l_{j}" for j in range(index, self.size)]
        hit = leansyntax.first_token_reference(proof_text, later)
        if hit is not None:
            raise ValueError(
                f"proof of lemma {index} references {hit}, which is not"
                " available at that point"
            )
        self._entries[index] = ProvenLemma(proof_text, provenance)

    def unproven(self) -> list:
        return [i for i in range(self.size) if i not in self._entries]

    def complete(self) -> bool:
        return len(self._entries) == self.size


@dataclass(frozen=True)
class TheoremOutcome:
    """Final result of running one theorem through the pipeline."""

    task_name: str
    solved: bool
    solving_attempt_index: Optional[int]
    final_proof: Optional[str]
    phase_trace: Tuple[str, ...]
    consumed: int
    per_stage: Mapping[str, int]
    guidance_calls: int
    guidance_timings: Mapping[str, float]
    diagnostics: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.solved:
            if self.solving_attempt_index is None or self.final_proof is None:
                raise ValueError("solved outcome needs an index and a proof")
            if not 1 <= self.solving_attempt_index <= self.consumed:
                raise ValueError(
                    "solving attempt index must lie within consumed attempts"
                )
        elif self.solving_attempt_index is not None or self.final_proof is not None:
            raise ValueError("unsolved outcome cannot carry a proof")
