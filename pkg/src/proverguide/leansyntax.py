"""Structural parsing and synthesis of Lean 4 proof text.

Everything here is lexical: comment/string masking, bracket-depth
scanning, `have` extraction, binder renaming, hypothesis injection, and
final-proof splicing.  Nothing elaborates Lean — the verifier is the
arbiter of meaning; this module only has to find spans and rebuild text.

All functions are pure and safe to call from concurrent pipelines.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from proverguide.tasks import Lemma, LemmaSelection, ProvenSet, TheoremTask

OPEN_BRACKETS = {"(": ")", "[": "]", "{": "}", "⟨": "⟩", "⦃": "⦄"}
CLOSE_BRACKETS = {v: k for k, v in OPEN_BRACKETS.items()}

# Identifier characters: Lean names allow primes, subscripts, and the
# `!`/`?` suffixes that appear in tactic names like `simp?`.
_IDENT_EXTRA = "_'!?₀₁₂₃₄₅₆₇₈₉"


class LeanSyntaxError(Exception):
    pass


class EmbeddingUnsafeError(LeanSyntaxError):
    """The text to embed would terminate the enclosing block comment."""


class StatementSplitError(LeanSyntaxError):
    """No top-level colon separates binders from the goal."""


class BinderCollisionError(LeanSyntaxError):
    """A statement already uses a target `l_<i>` name for something else."""


class MissingLemmaProofError(LeanSyntaxError):
    """Splicing was asked for before every lemma had a verified proof."""


def is_ident_char(c: str) -> bool:
    return c.isalnum() or c in _IDENT_EXTRA


# ---------------------------------------------------------------------------
# Masking: comments and string literals are replaced by spaces so the
# structural scan never reacts to tokens inside them.  Newlines survive so
# offsets and line numbers stay aligned with the raw text.
# ---------------------------------------------------------------------------


def _code_intervals(text: str) -> List[Tuple[int, int]]:
    """Half-open [start, end) intervals of text outside comments/strings."""
    intervals = []
    i, n, start = 0, len(text), 0
    while i < n:
        c = text[i]
        nxt = text[i + 1] if i + 1 < n else ""
        if c == "-" and nxt == "-":
            intervals.append((start, i))
            i += 2
            while i < n and text[i] != "\n":
                i += 1
            start = i
        elif c == "/" and nxt == "-":
            intervals.append((start, i))
            depth = 1
            i += 2
            while i < n and depth:
                if text[i] == "/" and i + 1 < n and text[i + 1] == "-":
                    depth += 1
                    i += 2
                elif text[i] == "-" and i + 1 < n and text[i + 1] == "/":
                    depth -= 1
                    i += 2
                else:
                    i += 1
            start = i
        elif c == '"':
            intervals.append((start, i))
            i += 1
            while i < n:
                if text[i] == "\\" and i + 1 < n and text[i + 1] != "\n":
                    i += 2
                elif text[i] == '"':
                    i += 1
                    break
                else:
                    i += 1
            start = i
        else:
            i += 1
    intervals.append((start, n))
    return [(a, b) for a, b in intervals if b > a]


def mask_noncode(text: str) -> str:
    """Copy of text with comments and strings blanked (newlines kept)."""
    buf = ["\n" if ch == "\n" else " " for ch in text]
    for a, b in _code_intervals(text):
        buf[a:b] = text[a:b]
    return "".join(buf)


def balanced_delimiters(text: str) -> bool:
    stack = []
    for c in mask_noncode(text):
        if c in OPEN_BRACKETS:
            stack.append(c)
        elif c in CLOSE_BRACKETS:
            if not stack or stack.pop() != CLOSE_BRACKETS[c]:
                return False
    return not stack


def _iter_ident_tokens(masked: str):
    """Yield (token, start) for identifier-shaped tokens in masked text."""
    i, n = 0, len(masked)
    while i < n:
        if is_ident_char(masked[i]):
            j = i
            while j < n and is_ident_char(masked[j]):
                j += 1
            yield masked[i:j], i
            i = j
        else:
            i += 1


def contains_sorry(text: str) -> bool:
    """True iff `sorry` appears as a standalone token in code."""
    masked = mask_noncode(text)
    for token, start in _iter_ident_tokens(masked):
        if token == "sorry" and (start == 0 or masked[start - 1] != "."):
            return True
    return False


def first_token_reference(text: str, names: Sequence[str]) -> Optional[str]:
    """First of `names` occurring as a standalone token in code, else None."""
    wanted = set(names)
    masked = mask_noncode(text)
    for token, start in _iter_ident_tokens(masked):
        if token in wanted and (start == 0 or masked[start - 1] != "."):
            return token
    return None


def replace_tokens(text: str, mapping: Dict[str, str]) -> str:
    """Simultaneous token-boundary replacement (skips comments/strings)."""
    if not mapping:
        return text
    masked = mask_noncode(text)
    pieces = []
    cursor = 0
    for token, start in _iter_ident_tokens(masked):
        if token in mapping and (start == 0 or masked[start - 1] != "."):
            pieces.append(text[cursor:start])
            pieces.append(mapping[token])
            cursor = start + len(token)
    pieces.append(text[cursor:])
    return "".join(pieces)


def normalize_statement(text: str) -> str:
    return " ".join(text.split())


# ---------------------------------------------------------------------------
# have extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SourceSpan:
    start: int
    end: int
    line: int  # 1-based line of the `have` token
    column: int  # 0-based column of the `have` token

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("span start beyond end")

    def contains(self, other: "SourceSpan") -> bool:
        return self.start <= other.start and other.end <= self.end

    def overlaps(self, other: "SourceSpan") -> bool:
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class HaveOccurrence:
    lemma: Lemma
    span: SourceSpan


@dataclass
class ScanDiagnostics:
    candidates: int = 0
    extracted: int = 0
    skipped: Dict[str, int] = field(default_factory=dict)

    def skip(self, reason: str) -> None:
        self.skipped[reason] = self.skipped.get(reason, 0) + 1

    @property
    def skipped_total(self) -> int:
        return sum(self.skipped.values())


@dataclass
class HaveScan:
    occurrences: List[HaveOccurrence]
    diagnostics: ScanDiagnostics

    @property
    def lemmas(self) -> List[Lemma]:
        return [occ.lemma for occ in self.occurrences]


class _LineTable:
    def __init__(self, text: str):
        self.lines = text.split("\n")
        starts = [0]
        for ln in self.lines[:-1]:
            starts.append(starts[-1] + len(ln) + 1)
        self.starts = starts

    def line_of(self, pos: int) -> int:
        return bisect.bisect_right(self.starts, pos) - 1

    def end_of(self, li: int) -> int:
        return self.starts[li] + len(self.lines[li])

    def indent(self, li: int) -> int:
        ln = self.lines[li]
        return len(ln) - len(ln.lstrip(" \t"))

    def is_blank(self, li: int) -> bool:
        return not self.lines[li].strip()


def _dedent_lines(raw_lines: List[str]) -> str:
    """Dedent by the minimum indent; drop trailing blanks; rstrip lines."""
    nonblank = [ln for ln in raw_lines if ln.strip()]
    if not nonblank:
        return ""
    cut = min(len(ln) - len(ln.lstrip(" \t")) for ln in nonblank)
    kept = list(raw_lines)
    while kept and not kept[-1].strip():
        kept.pop()
    return "\n".join(ln[cut:].rstrip() if ln.strip() else "" for ln in kept)


def dedent_text(text: str) -> str:
    return _dedent_lines(text.split("\n"))


def indent_block(text: str, prefix: str) -> str:
    return "\n".join(
        prefix + ln if ln.strip() else "" for ln in text.split("\n")
    )


def _find_top_level(masked: str, begin: int, end: int, targets: str):
    """Position of the first top-level occurrence of any target char.

    Returns (position, char) or (None, None).  `:=` is reported as ':='
    via char ':' with the caller checking the next character; this helper
    only tracks bracket depth.
    """
    depth = 0
    q = begin
    while q < end:
        c = masked[q]
        if c in OPEN_BRACKETS:
            depth += 1
        elif c in CLOSE_BRACKETS:
            depth -= 1
        elif depth == 0 and c in targets:
            return q, c
        q += 1
    return None, None


def scan_haves(text: str, attempt_index: Optional[int] = None) -> HaveScan:
    """Locate every well-formed `have` and return lemmas with source spans.

    Malformed candidates (no statement colon, no `:=`, empty statement,
    unterminated binder pattern) are skipped and tallied, never fatal.
    """
    masked = mask_noncode(text)
    table = _LineTable(masked)
    diags = ScanDiagnostics()
    occurrences: List[HaveOccurrence] = []
    anon_count = 0
    n = len(masked)
    sources = (
        frozenset((attempt_index,)) if attempt_index is not None else frozenset()
    )

    search = 0
    while True:
        hit = masked.find("have", search)
        if hit == -1:
            break
        search = hit + 4
        before = masked[hit - 1] if hit > 0 else " "
        after = masked[hit + 4] if hit + 4 < n else " "
        if is_ident_char(before) or before == "." or is_ident_char(after):
            continue
        diags.candidates += 1

        have_line = table.line_of(hit)
        have_indent = table.indent(have_line)
        last_line = have_line
        for li in range(have_line + 1, len(table.lines)):
            if table.is_blank(li) or table.indent(li) > have_indent:
                last_line = li
            else:
                break
        extent_end = table.end_of(last_line)

        # binder: named, anonymous-constructor pattern, or absent
        p = hit + 4
        while p < extent_end and masked[p] in " \t\n":
            p += 1
        binder: Optional[str] = None
        is_pattern = False
        if p < extent_end and masked[p] == "⟨":
            depth = 0
            q = p
            while q < extent_end:
                if masked[q] == "⟨":
                    depth += 1
                elif masked[q] == "⟩":
                    depth -= 1
                    if depth == 0:
                        break
                q += 1
            if q >= extent_end:
                diags.skip("unterminated_pattern")
                continue
            binder = text[p : q + 1]
            is_pattern = True
            p = q + 1
        elif p < extent_end and is_ident_char(masked[p]) and not masked[p].isdigit():
            q = p
            while q < extent_end and is_ident_char(masked[q]):
                q += 1
            binder = text[p:q]
            p = q

        # statement: first top-level ':' (not ':=') up to first top-level ':='
        depth = 0
        colon = None
        assign = None
        q = p
        while q < extent_end:
            c = masked[q]
            if c in OPEN_BRACKETS:
                depth += 1
            elif c in CLOSE_BRACKETS:
                depth -= 1
            elif c == ":" and depth == 0:
                if q + 1 < n and masked[q + 1] == "=":
                    assign = q
                    break
                if colon is None:
                    colon = q
            q += 1
        if assign is None:
            diags.skip("no_assignment")
            continue
        if colon is None:
            diags.skip("no_statement_colon")
            continue
        statement = text[colon + 1 : assign].strip()
        if not statement:
            diags.skip("empty_statement")
            continue

        if binder is None:
            binder = f"anon_{anon_count}"
            anon_count += 1

        # proof: `by` tactic block scoped by indentation, or a term
        p = assign + 2
        proof_line = table.line_of(p)
        line_end = table.end_of(proof_line)
        while p < line_end and masked[p] in " \t":
            p += 1
        rest = masked[p:line_end]
        is_by = rest == "by" or rest.startswith(("by ", "by\t"))
        block_lines = [
            text[table.starts[li] : table.end_of(li)]
            for li in range(proof_line + 1, last_line + 1)
        ]
        span_end = extent_end

        if is_by:
            inline = text[p + 2 : line_end].strip()
        else:
            cut, _ = _find_top_level(masked, p, line_end, ";")
            if cut is not None:
                inline = text[p:cut].strip()
                block_lines = []
                span_end = cut
            else:
                inline = text[p:line_end].strip()
        dedented = _dedent_lines(block_lines)
        if inline and dedented:
            proof = inline + "\n" + dedented
        elif inline:
            proof = inline
        else:
            proof = dedented

        diags.extracted += 1
        lemma = Lemma(
            binder_name=binder,
            statement_text=statement,
            proof_text=proof,
            proof_texts=(proof,),
            source_attempts=sources,
            pattern_binder=is_pattern,
        )
        span = SourceSpan(
            start=hit,
            end=span_end,
            line=have_line + 1,
            column=hit - table.starts[have_line],
        )
        occurrences.append(HaveOccurrence(lemma=lemma, span=span))
    return HaveScan(occurrences=occurrences, diagnostics=diags)


def extract_have_statements(
    proof_text: str, attempt_index: Optional[int] = None
) -> List[Lemma]:
    """Every (possibly nested) `have` in source order; see scan_haves."""
    return scan_haves(proof_text, attempt_index=attempt_index).lemmas


def dedupe_pool(lemmas: Iterable[Lemma]) -> List[Lemma]:
    """Merge lemmas with equal normalized statements, first-seen order.

    The merged lemma keeps the first binder name, the union of source
    attempts, and every distinct proof in first-seen order (the salvage
    stage tries each of them).
    """
    merged: Dict[str, Lemma] = {}
    for lm in lemmas:
        key = lm.normalized_statement
        if key not in merged:
            merged[key] = lm
            continue
        base = merged[key]
        proofs = list(base.recorded_proofs)
        for pf in lm.recorded_proofs:
            if pf not in proofs:
                proofs.append(pf)
        merged[key] = Lemma(
            binder_name=base.binder_name,
            statement_text=base.statement_text,
            proof_text=proofs[0] if proofs else None,
            proof_texts=tuple(proofs),
            source_attempts=base.source_attempts | lm.source_attempts,
            pattern_binder=base.pattern_binder,
            syntax_valid=base.syntax_valid,
        )
    return list(merged.values())


def cap_pool(lemmas: Sequence[Lemma], cap: int) -> List[Lemma]:
    """Keep the `cap` lemmas with the widest attempt coverage, stably."""
    if len(lemmas) <= cap:
        return list(lemmas)
    ranked = sorted(
        range(len(lemmas)),
        key=lambda i: (-len(lemmas[i].source_attempts), i),
    )
    return [lemmas[i] for i in ranked[:cap]]


# ---------------------------------------------------------------------------
# Prompt-source and statement synthesis
# ---------------------------------------------------------------------------


def embed_summary(
    formal_statement: str, preamble: str = "", summary: Optional[str] = None
) -> str:
    """Prover-facing source: statement opened with `:= by` and an optional
    informal-proof block comment for the chain-of-thought to continue from.

    Pass summary=None to emit no comment block at all (guidance disabled);
    an empty string still emits an (empty) comment block.
    """
    if summary is not None:
        for tok in ("-/", "/-"):
            if tok in summary:
                raise EmbeddingUnsafeError(
                    f"summary contains {tok!r} and cannot be embedded"
                )
    head = preamble.rstrip() + "\n\n" if preamble.strip() else ""
    src = head + formal_statement.rstrip() + " := by\n"
    if summary is not None:
        src += f"  /- {summary} -/\n"
    return src


@dataclass(frozen=True)
class StatementSplit:
    binder_segment: str
    goal_segment: str

    @property
    def goal(self) -> str:
        return self.goal_segment.strip()

    def reassemble(self) -> str:
        return self.binder_segment + ":" + self.goal_segment


def split_statement(formal_statement: str) -> StatementSplit:
    """Split a theorem signature at the colon introducing its goal.

    That is the first top-level colon (not part of `:=`): every legal
    binder block is bracket-delimited, while the goal itself may contain
    further top-level colons (`∀ x : ℕ, …`), so the first one is the
    separator.
    """
    masked = mask_noncode(formal_statement)
    depth = 0
    for q, c in enumerate(masked):
        if c in OPEN_BRACKETS:
            depth += 1
        elif c in CLOSE_BRACKETS:
            depth -= 1
        elif c == ":" and depth == 0:
            if q + 1 < len(masked) and masked[q + 1] == "=":
                break
            return StatementSplit(
                binder_segment=formal_statement[:q],
                goal_segment=formal_statement[q + 1 :],
            )
    raise StatementSplitError(
        "no top-level colon found in statement: " + formal_statement[:80]
    )


_DECL_KEYWORDS = ("theorem", "lemma", "example")


def lean_safe_name(name: str) -> str:
    """Mangle an arbitrary dataset name into a legal Lean identifier."""
    safe = "".join(c if (c.isalnum() or c == "_") else "_" for c in name)
    if not safe or safe[0].isdigit():
        safe = "t_" + safe
    return safe


def rename_theorem(binder_segment: str, new_name: str) -> str:
    """Replace the declared name in a binder segment with `new_name`.

    `example` declarations have no name; the keyword itself becomes
    `theorem <new_name>`.
    """
    masked = mask_noncode(binder_segment)
    for token, start in _iter_ident_tokens(masked):
        if token not in _DECL_KEYWORDS:
            continue
        end = start + len(token)
        if token == "example":
            return (
                binder_segment[:start] + f"theorem {new_name}" + binder_segment[end:]
            )
        rest = list(_iter_ident_tokens(masked[end:]))
        if not rest:
            raise LeanSyntaxError(
                f"no name token after {token!r} in: {binder_segment[:80]}"
            )
        name_tok, rel = rest[0]
        name_start = end + rel
        return (
            binder_segment[:name_start]
            + new_name
            + binder_segment[name_start + len(name_tok) :]
        )
    raise LeanSyntaxError(
        "no theorem/lemma/example keyword in: " + binder_segment[:80]
    )


def rename_binders(lemmas: Sequence[Lemma]) -> List[Lemma]:
    """Rename a selection to l_0 … l_{m-1}, rewriting cross-references.

    References to old binder names inside later statements are replaced
    simultaneously (so swaps cannot chain).  A bare `l_<i>` token that is
    not one of the old binder names would be captured by the renaming and
    raises BinderCollisionError instead.
    """
    targets = [f"l_{i}" for i in range(len(lemmas))]
    mapping: Dict[str, str] = {}
    for old, new in zip((lm.binder_name for lm in lemmas), targets):
        if old not in mapping and not _is_pattern_name(old):
            mapping.setdefault(old, new)
    renamed: List[Lemma] = []
    free = [t for t in targets if t not in mapping]
    for i, lm in enumerate(lemmas):
        clash = first_token_reference(lm.statement_text, free)
        if clash is not None:
            raise BinderCollisionError(
                f"statement of lemma {i} already uses {clash!r}"
            )
        new_stmt = replace_tokens(lm.statement_text, mapping)
        renamed.append(
            Lemma(
                binder_name=targets[i],
                statement_text=new_stmt,
                proof_text=lm.proof_text,
                proof_texts=lm.proof_texts,
                source_attempts=lm.source_attempts,
                pattern_binder=lm.pattern_binder,
                syntax_valid=lm.syntax_valid,
            )
        )
    return renamed


def _is_pattern_name(name: str) -> bool:
    return name.startswith("⟨")


def _hypothesis_binders(selection: LemmaSelection, upto: int) -> str:
    parts = [
        f"(l_{j} : {selection.items[j].lemma.normalized_statement})"
        for j in range(upto)
    ]
    return " ".join(parts)


def _with_preamble(preamble: str, statement: str) -> str:
    if preamble.strip():
        return preamble.rstrip() + "\n\n" + statement
    return statement


def build_lemma_theorem(
    task: TheoremTask, selection: LemmaSelection, index: int
) -> str:
    """Standalone theorem for lemma `index`: original binders, the
    preceding lemmas as extra hypotheses, and lemma `index` as the goal."""
    if not 0 <= index < len(selection):
        raise IndexError(f"lemma index {index} outside selection")
    split = split_statement(task.formal_statement)
    head = rename_theorem(
        split.binder_segment.rstrip(), f"{lean_safe_name(task.name)}_lemma_{index}"
    )
    binders = _hypothesis_binders(selection, index)
    if binders:
        head = f"{head} {binders}"
    goal = selection.items[index].lemma.normalized_statement
    return _with_preamble(task.preamble, f"{head} : {goal}")


def build_main_theorem(task: TheoremTask, selection: LemmaSelection) -> str:
    """Original statement with every selected lemma appended as a hypothesis."""
    if len(selection) == 0:
        raise ValueError("main theorem needs a non-empty selection")
    split = split_statement(task.formal_statement)
    head = rename_theorem(
        split.binder_segment.rstrip(), f"{lean_safe_name(task.name)}_main"
    )
    binders = _hypothesis_binders(selection, len(selection))
    return _with_preamble(task.preamble, f"{head} {binders} : {split.goal}")


def splice_final_proof(
    task: TheoremTask,
    selection: LemmaSelection,
    proven: ProvenSet,
    main_proof_body: str,
) -> str:
    """Assemble the final artifact: the original statement proved `by`
    one `have` per selected lemma followed by the main proof body."""
    missing = proven.unproven()
    if missing:
        raise MissingLemmaProofError(
            f"no verified proof for lemma indices {missing}"
        )
    if not main_proof_body.strip():
        raise MissingLemmaProofError("main proof body is empty")
    lines: List[str] = []
    for item in selection.items:
        stmt = item.lemma.normalized_statement
        lines.append(f"  have {item.lemma.binder_name} : {stmt} := by")
        lines.append(indent_block(dedent_text(proven.proof_for(item.index)), "    "))
    lines.append(indent_block(dedent_text(main_proof_body), "  "))
    body = "\n".join(lines)
    head = _with_preamble(task.preamble, task.formal_statement.rstrip() + " := by\n")
    return head + body + "\n"


# ---------------------------------------------------------------------------
# Prover completion handling
# ---------------------------------------------------------------------------


def strip_code_fences(completion: str) -> str:
    """Text of the first code block in a completion.

    The prover is prompted from inside an open ```lean4 fence, so a plain
    continuation is returned as-is up to the closing fence.  Models that
    restart the fence themselves get the first fenced block instead.
    """
    s = completion
    if s.lstrip().startswith("```"):
        first_nl = s.find("\n", s.find("```"))
        if first_nl == -1:
            return ""
        s = s[first_nl + 1 :]
    cut = s.find("```")
    if cut != -1:
        s = s[:cut]
    return s
