"""LLM-guided lemma decomposition harness for specialized Lean 4 provers.

A guidance model writes a natural-language proof and picks intermediate
lemmas out of a specialized prover's failed attempts; the pipeline then
drives the prover lemma by lemma, splices the verified pieces into one
proof, and checks the result under a strict prover-call budget.
"""

from proverguide.tasks import (
    BudgetExhaustedError,
    BudgetLedger,
    Lemma,
    LemmaSelection,
    NlGuidance,
    ProofAttempt,
    Provenance,
    ProvenSet,
    SelectedLemma,
    SyntaxValidity,
    TheoremOutcome,
    TheoremTask,
    VerificationResult,
    VerificationStatus,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetExhaustedError",
    "BudgetLedger",
    "Lemma",
    "LemmaSelection",
    "NlGuidance",
    "ProofAttempt",
    "Provenance",
    "ProvenSet",
    "SelectedLemma",
    "SyntaxValidity",
    "TheoremOutcome",
    "TheoremTask",
    "VerificationResult",
    "VerificationStatus",
    "__version__",
]
