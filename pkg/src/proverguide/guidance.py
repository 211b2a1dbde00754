"""The four LLM-guidance procedures and their response parsers.

Structured outputs (the CHOSEN LEMMAS section, the STEPS/Proof/Final
Proof layout) are parsed strictly: one re-ask on malformed output, then
deterministic degradation (empty selection, or the full natural-language
proof standing in for a missing section).  Chosen lemma text is treated
purely as a pointer back into the candidate pool — matching is by
normalized statement, so the guidance model cannot inject new lemmas.
"""

from __future__ import annotations

import re
from typing import Dict, List, Optional, Sequence, Tuple

from proverguide import leansyntax
from proverguide.clients import ClientError, ModelClient
from proverguide.runlog import RecordSink
from proverguide.tasks import (
    BudgetLedger,
    Lemma,
    LemmaSelection,
    SelectedLemma,
    TheoremTask,
)
from proverguide.templates import TemplateSet

SUMMARY_OPENERS = (
    "We want to show that",
    "We have",
    "We need to show that",
    "To show that",
)


class GuidanceUnavailableError(Exception):
    """The guidance endpoint failed or returned nothing usable."""


def sanitize_comment_markers(text: str) -> str:
    """Make text safe to embed in a Lean block comment."""
    out = text.replace("-/", "- /")
    while "/-" in out or "-/" in out:
        out = out.replace("-/", "- /").replace("/-", "/ -")
    return out


_CHOSEN_HEADING_RE = re.compile(r"CHOSEN LEMMAS:?")
_CHOSEN_LINE_RE = re.compile(
    r"^\s*have\s+l_(\d+)\s*:\s*(.*?)\s*:=\s*by\s*$", re.MULTILINE
)


def parse_chosen_lemmas(text: str) -> Optional[List[str]]:
    """Statements from the final CHOSEN LEMMAS section, in response order.

    Returns None when the heading is absent (a malformed response that
    warrants a re-ask); a heading with no well-formed lines is an empty
    choice, which is valid.
    """
    last = None
    for match in _CHOSEN_HEADING_RE.finditer(text):
        last = match
    if last is None:
        return None
    tail = text[last.end() :]
    return [m.group(2) for m in _CHOSEN_LINE_RE.finditer(tail)]


_STEP_RE = re.compile(r"^\s*l_(\d+)\s*:", re.MULTILINE)
_PROOF_RE = re.compile(r"^\s*Proof\s*:", re.MULTILINE)
_FINAL_RE = re.compile(r"^\s*Final Proof\s*:", re.MULTILINE)


def parse_step_sections(
    text: str, count: int
) -> Tuple[Dict[int, str], Optional[str], List[str]]:
    """Proof bodies for steps l_0 … l_{count-1} plus the Final Proof body.

    Total on arbitrary input: anything unrecognizable simply yields fewer
    sections.  Returns (proofs-by-index, final-proof-or-None, warnings).
    """
    markers = []
    for m in _STEP_RE.finditer(text):
        markers.append((m.start(), m.end(), "step", int(m.group(1))))
    for m in _PROOF_RE.finditer(text):
        markers.append((m.start(), m.end(), "proof", None))
    for m in _FINAL_RE.finditer(text):
        markers.append((m.start(), m.end(), "final", None))
    markers.sort()
    warnings: List[str] = []
    proofs: Dict[int, str] = {}
    final_body: Optional[str] = None
    for pos, (start, end, kind, idx) in enumerate(markers):
        nxt = markers[pos + 1][0] if pos + 1 < len(markers) else len(text)
        if kind == "final":
            final_body = text[end:nxt].strip() or final_body
        elif kind == "step":
            if idx >= count:
                warnings.append(f"unexpected step label l_{idx} ignored")
                continue
            if pos + 1 < len(markers) and markers[pos + 1][2] == "proof":
                p_start, p_end = markers[pos + 1][0], markers[pos + 1][1]
                after = (
                    markers[pos + 2][0] if pos + 2 < len(markers) else len(text)
                )
                body = text[p_end:after].strip()
                if body and idx not in proofs:
                    proofs[idx] = body
                elif idx in proofs:
                    warnings.append(f"duplicate section for l_{idx} ignored")
    return proofs, final_body, warnings


class GuidanceEngine:
    """Stateless facade over the two guidance endpoints."""

    def __init__(
        self,
        templates: TemplateSet,
        reasoner: Optional[ModelClient] = None,
        worker: Optional[ModelClient] = None,
    ):
        self.templates = templates
        self.reasoner = reasoner
        self.worker = worker

    # -- plumbing ------------------------------------------------------------

    def _ask(
        self,
        client: Optional[ModelClient],
        task_label: str,
        messages: List[dict],
        task: TheoremTask,
        ledger: BudgetLedger,
        sink: RecordSink,
    ) -> str:
        if client is None:
            raise GuidanceUnavailableError(
                f"no endpoint configured for guidance task {task_label!r}"
            )
        try:
            completion = client.complete(messages, tag=task.name)
        except ClientError as exc:
            raise GuidanceUnavailableError(str(exc)) from exc
        ledger.record_guidance(task_label, completion.latency_s)
        sink.guidance(task.name, task_label, completion.latency_s, completion.text)
        return completion.text

    # -- the four procedures ---------------------------------------------------

    def generate_nl_proof(
        self, task: TheoremTask, ledger: BudgetLedger, sink: RecordSink
    ) -> str:
        prompt = self.templates.render(
            "nl_proof",
            formal_statement=task.formal_statement,
            informal_statement=task.informal_statement,
        )
        messages = [{"role": "user", "content": prompt}]
        for _ in range(2):
            text = self._ask(self.reasoner, "nl_proof", messages, task, ledger, sink)
            if text.strip():
                return text
        raise GuidanceUnavailableError("empty natural-language proof twice")

    def summarize_nl_proof(
        self,
        task: TheoremTask,
        nl_proof: str,
        ledger: BudgetLedger,
        sink: RecordSink,
    ) -> Tuple[str, List[str]]:
        if not nl_proof.strip():
            raise ValueError("cannot summarize an empty proof")
        messages = [
            {"role": "system", "content": self.templates.render("summarize_system")},
            {
                "role": "user",
                "content": self.templates.render(
                    "summarize_user",
                    formal_statement=task.formal_statement,
                    informal_statement=task.informal_statement,
                    nl_proof=nl_proof,
                ),
            },
        ]
        for _ in range(2):
            text = self._ask(self.worker, "summary", messages, task, ledger, sink)
            if text.strip():
                break
        else:
            raise GuidanceUnavailableError("empty summary twice")
        summary = sanitize_comment_markers(text.strip())
        warnings = []
        if not summary.startswith(SUMMARY_OPENERS):
            warnings.append(
                "summary does not start with one of the expected openers"
            )
        return summary, warnings

    def select_lemmas(
        self,
        task: TheoremTask,
        nl_proof: str,
        pool: Sequence[Lemma],
        max_lemmas: int,
        ledger: BudgetLedger,
        sink: RecordSink,
    ) -> Tuple[LemmaSelection, List[str]]:
        """Ask the guidance model to pick ≤ max_lemmas pool entries.

        The returned selection is renamed to l_0… and carries no informal
        proofs yet.  A response that cannot be parsed even after a re-ask
        degrades to the empty selection (callers take the fallback path).
        """
        if not pool:
            raise ValueError("selection needs a non-empty candidate pool")
        if max_lemmas < 1:
            raise ValueError("max_lemmas must be >= 1")
        enumerated = "\n".join(
            f"{i}: {lm.normalized_statement}" for i, lm in enumerate(pool)
        )
        messages = [
            {"role": "system", "content": self.templates.render("select_system")},
            {
                "role": "user",
                "content": self.templates.render(
                    "select_user",
                    formal_statement=task.formal_statement,
                    informal_statement=task.informal_statement,
                    nl_proof=nl_proof,
                    lemmas=enumerated,
                ),
            },
        ]
        warnings: List[str] = []
        chosen = None
        for round_no in (1, 2):
            text = self._ask(self.worker, "selection", messages, task, ledger, sink)
            chosen = parse_chosen_lemmas(text)
            if chosen is not None:
                break
            if round_no == 1:
                warnings.append("selection response lacked a CHOSEN LEMMAS section")
        if chosen is None:
            warnings.append("selection unparseable twice; taking fallback")
            return LemmaSelection(items=()), warnings

        by_statement = {}
        for lm in pool:
            by_statement.setdefault(lm.normalized_statement, lm)
        picked: List[Lemma] = []
        seen = set()
        for stmt in chosen:
            key = leansyntax.normalize_statement(stmt)
            lemma = by_statement.get(key)
            if lemma is None:
                warnings.append(f"chosen lemma not in pool, dropped: {key[:60]!r}")
                continue
            if key in seen:
                warnings.append(f"duplicate chosen lemma dropped: {key[:60]!r}")
                continue
            seen.add(key)
            picked.append(lemma)
        if len(picked) > max_lemmas:
            warnings.append(
                f"model chose {len(picked)} lemmas; keeping the first {max_lemmas}"
            )
            picked = picked[:max_lemmas]
        if not picked:
            return LemmaSelection(items=()), warnings
        try:
            renamed = leansyntax.rename_binders(picked)
        except leansyntax.BinderCollisionError as exc:
            warnings.append(f"binder renaming failed ({exc}); taking fallback")
            return LemmaSelection(items=()), warnings
        selection = LemmaSelection(
            items=tuple(
                SelectedLemma(index=i, lemma=lm) for i, lm in enumerate(renamed)
            )
        )
        selection.check(max_lemmas)
        return selection, warnings

    def generate_informal_lemma_proofs(
        self,
        task: TheoremTask,
        nl_proof: str,
        selection: LemmaSelection,
        ledger: BudgetLedger,
        sink: RecordSink,
    ) -> Tuple[LemmaSelection, List[str]]:
        """Attach an informal proof to every selected lemma plus the main
        goal.  Sections still missing after a re-ask fall back to the whole
        natural-language proof (flagged in the warnings)."""
        if len(selection) == 0:
            raise ValueError("informal proofs need a non-empty selection")
        m = len(selection)
        have_lines = "\n".join(
            f"have l_{i} : {item.lemma.normalized_statement} := by"
            for i, item in enumerate(selection.items)
        )
        messages = [
            {
                "role": "system",
                "content": self.templates.render("lemma_proofs_system"),
            },
            {
                "role": "user",
                "content": self.templates.render(
                    "lemma_proofs_user",
                    formal_statement=task.formal_statement,
                    informal_statement=task.informal_statement,
                    nl_proof=nl_proof,
                    lemmas=have_lines,
                ),
            },
        ]
        warnings: List[str] = []
        proofs: Dict[int, str] = {}
        final_body: Optional[str] = None
        for round_no in (1, 2):
            text = self._ask(
                self.worker, "lemma_proofs", messages, task, ledger, sink
            )
            got, final, parse_warnings = parse_step_sections(text, m)
            warnings.extend(parse_warnings)
            for idx, body in got.items():
                proofs.setdefault(idx, body)
            final_body = final_body or final
            if len(proofs) == m and final_body:
                break
            if round_no == 1:
                warnings.append("incomplete step sections; re-asking")

        label_names = [f"l_{j}" for j in range(m)]
        items = []
        for i, item in enumerate(selection.items):
            body = proofs.get(i)
            if body is None:
                warnings.append(
                    f"no informal proof for l_{i}; using the full proof text"
                )
                body = nl_proof
            hit = leansyntax.first_token_reference(body, label_names)
            if hit is not None:
                warnings.append(f"informal proof for l_{i} references {hit}")
            items.append(
                SelectedLemma(
                    index=i,
                    lemma=item.lemma,
                    informal_proof=sanitize_comment_markers(body),
                )
            )
        if final_body is None:
            warnings.append("no Final Proof section; using the full proof text")
            final_body = nl_proof
        completed = LemmaSelection(
            items=tuple(items),
            main_informal_proof=sanitize_comment_markers(final_body),
        )
        return completed, warnings
