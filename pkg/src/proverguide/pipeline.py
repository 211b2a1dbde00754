"""Per-theorem orchestration: the pipeline phase machine.

Initial prover attempts (with the informal-proof summary embedded as a
chain-of-thought seed) → lemma extraction from the failed attempts →
LLM selection → salvage of already-written lemma proofs → main sketch
under assumed lemmas → lemma-by-lemma proving → final assembly, with a
plain-sampling fallback and a strict prover-call budget throughout.

Prover generations are the only budgeted events.  Lean checks (lemma
syntax filtering, salvage, assembly) and guidance-model calls are free.
"""

from __future__ import annotations

import enum
from dataclasses import replace
from typing import List, Optional, Tuple

from proverguide import leansyntax
from proverguide.clients import ClientError, ModelClient
from proverguide.config import RunConfig
from proverguide.guidance import GuidanceEngine, GuidanceUnavailableError
from proverguide.runlog import NullSink, RecordSink
from proverguide.tasks import (
    EMPTY_GUIDANCE,
    BudgetLedger,
    Lemma,
    LemmaSelection,
    NlGuidance,
    ProofAttempt,
    Provenance,
    ProvenSet,
    STAGE_FALLBACK,
    STAGE_INITIAL,
    STAGE_MAIN_SKETCH,
    SyntaxValidity,
    TheoremOutcome,
    TheoremTask,
    lemma_stage,
)
from proverguide.templates import TemplateSet
from proverguide.verifier import ReplError


class PipelinePhase(enum.Enum):
    INITIAL_ATTEMPTS = "InitialAttempts"
    LEMMA_SELECTION = "LemmaSelection"
    SALVAGE = "Salvage"
    MAIN_SKETCH = "MainSketch"
    LEMMA_LOOP = "LemmaLoop"
    ASSEMBLY = "Assembly"
    FALLBACK = "Fallback"
    SOLVED = "Solved"
    EXHAUSTED = "Exhausted"


LEGAL_TRANSITIONS = {
    PipelinePhase.INITIAL_ATTEMPTS: {
        PipelinePhase.SOLVED,
        PipelinePhase.LEMMA_SELECTION,
        PipelinePhase.EXHAUSTED,
    },
    PipelinePhase.LEMMA_SELECTION: {
        PipelinePhase.SALVAGE,
        PipelinePhase.FALLBACK,
    },
    PipelinePhase.SALVAGE: {PipelinePhase.MAIN_SKETCH},
    PipelinePhase.MAIN_SKETCH: {
        PipelinePhase.LEMMA_LOOP,
        PipelinePhase.FALLBACK,
        PipelinePhase.EXHAUSTED,
    },
    PipelinePhase.LEMMA_LOOP: {
        PipelinePhase.ASSEMBLY,
        PipelinePhase.EXHAUSTED,
    },
    PipelinePhase.ASSEMBLY: {PipelinePhase.SOLVED, PipelinePhase.LEMMA_LOOP},
    PipelinePhase.FALLBACK: {PipelinePhase.SOLVED, PipelinePhase.EXHAUSTED},
    PipelinePhase.SOLVED: set(),
    PipelinePhase.EXHAUSTED: set(),
}


class IllegalTransitionError(Exception):
    pass


class PhaseTracker:
    def __init__(self):
        self.trace: List[PipelinePhase] = [PipelinePhase.INITIAL_ATTEMPTS]

    @property
    def current(self) -> PipelinePhase:
        return self.trace[-1]

    def move(self, phase: PipelinePhase) -> None:
        if phase not in LEGAL_TRANSITIONS[self.current]:
            raise IllegalTransitionError(
                f"{self.current.value} -> {phase.value} is not a legal transition"
            )
        self.trace.append(phase)

    def as_tuple(self) -> Tuple[str, ...]:
        return tuple(p.value for p in self.trace)


def is_legal_trace(trace: Tuple[str, ...]) -> bool:
    phases = []
    by_value = {p.value: p for p in PipelinePhase}
    for name in trace:
        if name not in by_value:
            return False
        phases.append(by_value[name])
    if not phases or phases[0] is not PipelinePhase.INITIAL_ATTEMPTS:
        return False
    return all(
        b in LEGAL_TRANSITIONS[a] for a, b in zip(phases, phases[1:])
    )


class TheoremPipeline:
    """Runs one theorem to an outcome.  Single-threaded by design."""

    def __init__(
        self,
        task: TheoremTask,
        config: RunConfig,
        prover: ModelClient,
        verifier,
        templates: TemplateSet,
        engine: Optional[GuidanceEngine] = None,
        sink: Optional[RecordSink] = None,
    ):
        self.task = task
        self.config = config
        self.prover = prover
        self.verifier = verifier
        self.templates = templates
        self.engine = engine
        self.sink = sink if sink is not None else NullSink()
        self.ledger = BudgetLedger(config.budget)
        self.trace = PhaseTracker()
        self.diagnostics: List[str] = []
        # Statement builders join the preamble in; prompts and the
        # verifier handle the preamble themselves, so synthesis works on
        # a preamble-free view of the task.
        self._bare_task = replace(task, preamble="")

    # -- entry point ----------------------------------------------------------

    def run(self) -> TheoremOutcome:
        try:
            return self._run()
        except (ClientError, ReplError) as exc:
            self.diagnostics.append(f"infrastructure failure: {exc}")
            return self._outcome(solved=False)

    def _run(self) -> TheoremOutcome:
        guidance = self._obtain_guidance()
        initial_limit = (
            self.config.initial_attempts
            if self.config.lemma_guidance
            else self.config.budget
        )
        summary_embed = self._embed_text(guidance.summary)

        solved = self._attempt_round(
            statement=self.task.formal_statement,
            embed=summary_embed,
            stage=STAGE_INITIAL,
            limit=initial_limit,
        )
        if solved is not None:
            return self._solved(*solved)
        if not self.config.lemma_guidance or not self.ledger.can_attempt():
            self.trace.move(PipelinePhase.EXHAUSTED)
            return self._outcome(solved=False)

        self.trace.move(PipelinePhase.LEMMA_SELECTION)
        selection = self._select_lemmas(guidance)
        if selection is None or len(selection) == 0:
            return self._fallback(summary_embed)

        self.trace.move(PipelinePhase.SALVAGE)
        proven = self._salvage(selection)

        self.trace.move(PipelinePhase.MAIN_SKETCH)
        main_statement = leansyntax.build_main_theorem(self._bare_task, selection)
        solved_main = self._attempt_round(
            statement=main_statement,
            embed=self._embed_text(selection.main_informal_proof),
            stage=STAGE_MAIN_SKETCH,
            limit=self.config.max_main_attempts,
        )
        if solved_main is None:
            if not self.ledger.can_attempt():
                self.trace.move(PipelinePhase.EXHAUSTED)
                return self._outcome(solved=False)
            return self._fallback(summary_embed)
        main_body = solved_main[0].proof_body

        self.trace.move(PipelinePhase.LEMMA_LOOP)
        return self._lemma_loop(selection, proven, main_body)

    # -- guidance -------------------------------------------------------------

    def _obtain_guidance(self) -> NlGuidance:
        if not self.config.informal_guidance:
            return NlGuidance(full_proof="", summary="")
        try:
            nl_proof = self.engine.generate_nl_proof(
                self.task, self.ledger, self.sink
            )
            summary, warnings = self.engine.summarize_nl_proof(
                self.task, nl_proof, self.ledger, self.sink
            )
            self.diagnostics.extend(warnings)
            return NlGuidance(full_proof=nl_proof, summary=summary)
        except GuidanceUnavailableError as exc:
            self.diagnostics.append(f"guidance degraded: {exc}")
            return EMPTY_GUIDANCE

    def _embed_text(self, text: str) -> Optional[str]:
        """What goes into the prover's CoT comment block; None disables
        the block entirely (the ablation without informal guidance)."""
        if not self.config.informal_guidance:
            return None
        return text

    # -- budgeted attempt rounds ------------------------------------------------

    def _attempt_round(
        self,
        statement: str,
        embed: Optional[str],
        stage: str,
        limit: int,
    ) -> Optional[Tuple[ProofAttempt, str]]:
        """Up to `limit` budgeted prover calls against one statement;
        stops at the first verified proof.  Returns (attempt, full
        source) on success, None otherwise."""
        for _ in range(limit):
            if not self.ledger.can_attempt():
                return None
            check_source = leansyntax.embed_summary(statement, "", embed)
            prompt_code = leansyntax.embed_summary(
                statement, self.task.preamble, embed
            )
            prompt = self.templates.render("prover_cot", body=prompt_code)
            completion = self.prover.complete(
                [{"role": "user", "content": prompt}], tag=self.task.name
            )
            body = leansyntax.strip_code_fences(completion.text)
            result = self.verifier.check_proof(
                check_source + body, preamble=self.task.preamble
            )
            attempt = ProofAttempt(
                attempt_index=self.ledger.next_index(),
                stage=stage,
                prompt_text=prompt,
                completion_text=completion.text,
                proof_body=body,
                verification=result,
                gen_seconds=completion.latency_s,
            )
            self.ledger.record_attempt(attempt)
            self.sink.attempt(self.task.name, attempt)
            if result.proved:
                return attempt, prompt_code + body
        return None

    # -- lemma pool and selection -------------------------------------------------

    def _build_pool(self) -> List[Lemma]:
        harvested: List[Lemma] = []
        for attempt in self.ledger.attempts:
            harvested.extend(
                leansyntax.extract_have_statements(
                    attempt.proof_body, attempt_index=attempt.attempt_index
                )
            )
        pool = leansyntax.cap_pool(
            leansyntax.dedupe_pool(harvested), self.config.pool_cap
        )
        valid = []
        for lemma in pool:
            verdict = self.verifier.check_lemma_syntax(self.task, lemma)
            if verdict is SyntaxValidity.VALID:
                valid.append(replace(lemma, syntax_valid=SyntaxValidity.VALID))
        return valid

    def _select_lemmas(self, guidance: NlGuidance) -> Optional[LemmaSelection]:
        pool = self._build_pool()
        if not pool:
            self.diagnostics.append("no syntactically valid lemma candidates")
            return None
        try:
            selection, warnings = self.engine.select_lemmas(
                self.task,
                guidance.full_proof,
                pool,
                self.config.max_lemmas,
                self.ledger,
                self.sink,
            )
            self.diagnostics.extend(warnings)
            if len(selection) == 0:
                return None
            if self.config.informal_guidance:
                selection, warnings = self.engine.generate_informal_lemma_proofs(
                    self.task,
                    guidance.full_proof,
                    selection,
                    self.ledger,
                    self.sink,
                )
                self.diagnostics.extend(warnings)
            return selection
        except GuidanceUnavailableError as exc:
            self.diagnostics.append(f"selection degraded: {exc}")
            return None

    # -- salvage, loop, assembly ---------------------------------------------------

    def _salvage(self, selection: LemmaSelection) -> ProvenSet:
        proven = ProvenSet(len(selection))
        for item in selection.items:
            for candidate in item.lemma.recorded_proofs:
                result = self.verifier.check_salvaged_proof(
                    self.task, item.lemma, candidate
                )
                if result.proved:
                    try:
                        proven.add(item.index, candidate, Provenance.SALVAGED)
                    except ValueError as exc:
                        self.diagnostics.append(f"salvage skipped: {exc}")
                    break
        return proven

    def _lemma_loop(
        self, selection: LemmaSelection, proven: ProvenSet, main_body: str
    ) -> TheoremOutcome:
        while True:
            if proven.complete():
                self.trace.move(PipelinePhase.ASSEMBLY)
                bare_final = leansyntax.splice_final_proof(
                    self._bare_task, selection, proven, main_body
                )
                result = self.verifier.check_proof(
                    bare_final, preamble=self.task.preamble
                )
                if result.proved:
                    final = leansyntax.splice_final_proof(
                        self.task, selection, proven, main_body
                    )
                    self.trace.move(PipelinePhase.SOLVED)
                    return self._outcome(
                        solved=True,
                        solving_attempt_index=self.ledger.consumed,
                        final_proof=final,
                    )
                # Individually verified parts that fail as a whole cannot
                # be fixed by re-proving the same parts again.
                self.diagnostics.append(
                    "assembly anomaly: verified parts failed to verify together"
                )
                self.trace.move(PipelinePhase.LEMMA_LOOP)
                self.trace.move(PipelinePhase.EXHAUSTED)
                return self._outcome(solved=False)
            if not self.ledger.can_attempt():
                self.trace.move(PipelinePhase.EXHAUSTED)
                return self._outcome(solved=False)
            for index in proven.unproven():
                if not self.ledger.can_attempt():
                    break
                statement = leansyntax.build_lemma_theorem(
                    self._bare_task, selection, index
                )
                solved = self._attempt_round(
                    statement=statement,
                    embed=self._embed_text(selection.items[index].informal_proof),
                    stage=lemma_stage(index),
                    limit=1,
                )
                if solved is not None:
                    proof_body = leansyntax.dedent_text(solved[0].proof_body)
                    try:
                        proven.add(index, proof_body, Provenance.LOOP_PROVED)
                    except ValueError as exc:
                        self.diagnostics.append(f"lemma {index} rejected: {exc}")

    # -- fallback and outcomes ----------------------------------------------------

    def _fallback(self, summary_embed: Optional[str]) -> TheoremOutcome:
        self.trace.move(PipelinePhase.FALLBACK)
        solved = self._attempt_round(
            statement=self.task.formal_statement,
            embed=summary_embed,
            stage=STAGE_FALLBACK,
            limit=self.config.budget,
        )
        if solved is not None:
            return self._solved(*solved)
        self.trace.move(PipelinePhase.EXHAUSTED)
        return self._outcome(solved=False)

    def _solved(self, attempt: ProofAttempt, full_source: str) -> TheoremOutcome:
        self.trace.move(PipelinePhase.SOLVED)
        return self._outcome(
            solved=True,
            solving_attempt_index=attempt.attempt_index,
            final_proof=full_source,
        )

    def _outcome(
        self,
        solved: bool,
        solving_attempt_index: Optional[int] = None,
        final_proof: Optional[str] = None,
    ) -> TheoremOutcome:
        return TheoremOutcome(
            task_name=self.task.name,
            solved=solved,
            solving_attempt_index=solving_attempt_index,
            final_proof=final_proof,
            phase_trace=self.trace.as_tuple(),
            consumed=self.ledger.consumed,
            per_stage=dict(self.ledger.per_stage),
            guidance_calls=self.ledger.guidance_calls,
            guidance_timings=dict(self.ledger.guidance_timings),
            diagnostics=tuple(self.diagnostics),
        )


def run_pipeline(
    task: TheoremTask,
    config: RunConfig,
    prover: ModelClient,
    verifier,
    templates: TemplateSet,
    engine: Optional[GuidanceEngine] = None,
    sink: Optional[RecordSink] = None,
) -> TheoremOutcome:
    return TheoremPipeline(
        task, config, prover, verifier, templates, engine, sink
    ).run()
