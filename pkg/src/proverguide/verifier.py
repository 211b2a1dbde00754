"""Lean REPL client: sessions, outcome classification, derived checks.

A session owns one REPL subprocess speaking the JSON-lines protocol
(request ``{"cmd": …, "env": n}``, responses delimited by a blank line).
The task preamble is elaborated once and its environment id reused for
every later command, so per-proof wall time stays within the verification
timeout.  A timeout kills the process; respawn (and preamble
re-elaboration) is deferred to the next command so the timed-out call
itself returns promptly.
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

from proverguide import leansyntax
from proverguide.tasks import (
    Lemma,
    ReplMessage,
    SyntaxValidity,
    TheoremTask,
    VerificationResult,
    VerificationStatus,
)


class ReplError(Exception):
    pass


class ReplTransportError(ReplError):
    """REPL crashed, closed its pipe, or answered with non-JSON."""


class ReplTimeoutError(ReplError):
    def __init__(self, elapsed: float):
        self.elapsed = elapsed
        super().__init__(f"verification exceeded timeout after {elapsed:.2f}s")


@dataclass(frozen=True)
class ReplSpec:
    """How to launch the REPL and how long to allow for housekeeping."""

    command: Tuple[str, ...]
    cwd: Optional[str] = None
    startup_timeout_s: float = 300.0
    kill_grace_s: float = 2.0


class ReplSession:
    """One REPL subprocess; commands are strictly serialized by a lock."""

    def __init__(self, spec: ReplSpec):
        self.spec = spec
        self._lock = threading.RLock()
        self._proc: Optional[subprocess.Popen] = None
        self._responses: Optional[queue.Queue] = None
        self._preamble: Optional[str] = None
        self._env: Optional[int] = None
        self.commands_sent = 0

    # -- process management -------------------------------------------------

    def _spawn(self) -> None:
        self._proc = subprocess.Popen(
            list(self.spec.command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
            cwd=self.spec.cwd,
        )
        self._responses = queue.Queue()
        thread = threading.Thread(
            target=self._read_loop,
            args=(self._proc.stdout, self._responses),
            daemon=True,
        )
        thread.start()

    def _read_loop(self, stream, out: queue.Queue) -> None:
        # Responses are blank-line-delimited blobs of JSON.
        chunk: List[str] = []
        for line in stream:
            if line.strip():
                chunk.append(line)
            elif chunk:
                out.put("".join(chunk))
                chunk = []
        if chunk:
            out.put("".join(chunk))
        out.put(None)  # EOF sentinel

    def _ensure_alive(self) -> None:
        if self._proc is None or self._proc.poll() is not None:
            self._env = None
            self._preamble = None
            self._spawn()

    def kill(self) -> None:
        with self._lock:
            if self._proc is not None:
                self._proc.kill()
                try:
                    self._proc.wait(timeout=self.spec.kill_grace_s)
                except subprocess.TimeoutExpired:
                    pass
            self._proc = None
            self._responses = None
            self._env = None
            self._preamble = None

    close = kill

    # -- protocol -----------------------------------------------------------

    def _roundtrip(self, request: dict, timeout: float) -> dict:
        start = time.monotonic()
        assert self._proc is not None and self._responses is not None
        try:
            self._proc.stdin.write(json.dumps(request, ensure_ascii=False) + "\n\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self.kill()
            raise ReplTransportError(f"REPL write failed: {exc}") from exc
        self.commands_sent += 1
        try:
            raw = self._responses.get(timeout=timeout)
        except queue.Empty:
            elapsed = time.monotonic() - start
            self.kill()
            raise ReplTimeoutError(elapsed) from None
        if raw is None:
            self.kill()
            raise ReplTransportError("REPL closed its output stream")
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            self.kill()
            raise ReplTransportError(f"REPL sent non-JSON: {raw[:200]!r}") from exc

    def ensure_preamble(self, preamble: str) -> None:
        """Elaborate the preamble once and remember its environment id."""
        with self._lock:
            self._ensure_alive()
            if not preamble.strip():
                if self._preamble is None:
                    self._preamble = ""
                    self._env = None
                return
            if self._preamble == preamble:
                return
            resp = self._roundtrip(
                {"cmd": preamble}, timeout=self.spec.startup_timeout_s
            )
            errors = [
                m
                for m in resp.get("messages", [])
                if m.get("severity") == "error"
            ]
            if errors:
                raise ReplTransportError(
                    f"preamble failed to elaborate: {errors[0].get('data', '')[:200]}"
                )
            self._preamble = preamble
            self._env = resp.get("env")

    def run_cmd(self, source: str, timeout: float) -> dict:
        with self._lock:
            self._ensure_alive()
            request = {"cmd": source}
            if self._env is not None:
                request["env"] = self._env
            return self._roundtrip(request, timeout)


class SessionPool:
    """Fixed-size pool; each pipeline leases one session for its lifetime."""

    def __init__(self, spec: ReplSpec, size: int):
        if size < 1:
            raise ValueError("pool size must be >= 1")
        self.spec = spec
        self._idle: queue.Queue = queue.Queue()
        self._created = 0
        self._size = size
        self._lock = threading.Lock()

    def acquire(self) -> ReplSession:
        try:
            return self._idle.get_nowait()
        except queue.Empty:
            pass
        with self._lock:
            if self._created < self._size:
                self._created += 1
                return ReplSession(self.spec)
        return self._idle.get()

    def release(self, session: ReplSession) -> None:
        self._idle.put(session)

    def close(self) -> None:
        while True:
            try:
                self._idle.get_nowait().kill()
            except queue.Empty:
                return


def _classify(resp: dict, source: str, elapsed: float) -> VerificationResult:
    messages = tuple(
        ReplMessage(
            severity=m.get("severity", "info"),
            text=m.get("data", ""),
            line=(m.get("pos") or {}).get("line", 0),
            column=(m.get("pos") or {}).get("column", 0),
        )
        for m in resp.get("messages", [])
    )
    has_sorry_token = leansyntax.contains_sorry(source)
    sorries = bool(resp.get("sorries"))
    errors = any(m.severity == "error" for m in messages)
    if not errors and not sorries and not has_sorry_token:
        status = VerificationStatus.PROVED
    else:
        status = VerificationStatus.FAILED
    return VerificationResult(
        status=status,
        messages=messages,
        contains_sorry=has_sorry_token or sorries,
        elapsed=elapsed,
    )


class ReplVerifier:
    """The checking facade one pipeline uses, bound to a leased session."""

    def __init__(self, session: ReplSession, timeout_s: float = 20.0):
        self.session = session
        self.timeout_s = timeout_s

    def check_proof(self, source: str, preamble: str = "") -> VerificationResult:
        """Classify one complete source unit per the success criteria:
        proved iff no error messages, no sorries, within the timeout."""
        start = time.monotonic()
        for retry in (False, True):
            try:
                self.session.ensure_preamble(preamble)
                resp = self.session.run_cmd(source, self.timeout_s)
                return _classify(resp, source, time.monotonic() - start)
            except ReplTimeoutError as exc:
                return VerificationResult(
                    status=VerificationStatus.TIMEOUT,
                    messages=(),
                    contains_sorry=leansyntax.contains_sorry(source),
                    elapsed=max(exc.elapsed, self.timeout_s),
                )
            except ReplTransportError:
                if retry:
                    return VerificationResult(
                        status=VerificationStatus.TRANSPORT_ERROR,
                        messages=(),
                        contains_sorry=leansyntax.contains_sorry(source),
                        elapsed=time.monotonic() - start,
                    )
        raise AssertionError("unreachable")

    def check_lemma_syntax(self, task: TheoremTask, lemma: Lemma) -> SyntaxValidity:
        """Eq-style sorry-stub elaboration: the lemma statement becomes the
        goal of a theorem with the task's global binders and a `sorry` body;
        valid iff elaboration produces no error-severity diagnostics."""
        split = leansyntax.split_statement(task.formal_statement)
        head = leansyntax.rename_theorem(
            split.binder_segment.rstrip(),
            f"{leansyntax.lean_safe_name(task.name)}_chk",
        )
        source = f"{head} : {lemma.normalized_statement} := by sorry"
        result = self.check_proof(source, preamble=task.preamble)
        if result.status is VerificationStatus.TRANSPORT_ERROR:
            raise ReplTransportError("syntax check could not reach the REPL")
        if result.status is VerificationStatus.TIMEOUT:
            return SyntaxValidity.INVALID
        if result.errors():
            return SyntaxValidity.INVALID
        return SyntaxValidity.VALID

    def check_salvaged_proof(
        self, task: TheoremTask, lemma: Lemma, candidate_proof: str
    ) -> VerificationResult:
        """Verify an extracted proof against only the global hypotheses."""
        if not candidate_proof.strip():
            return VerificationResult(
                status=VerificationStatus.FAILED,
                messages=(
                    ReplMessage(severity="error", text="empty candidate proof"),
                ),
                contains_sorry=False,
                elapsed=0.0,
            )
        split = leansyntax.split_statement(task.formal_statement)
        head = leansyntax.rename_theorem(
            split.binder_segment.rstrip(),
            f"{leansyntax.lean_safe_name(task.name)}_salvage",
        )
        body = leansyntax.indent_block(
            leansyntax.dedent_text(candidate_proof), "  "
        )
        source = f"{head} : {lemma.normalized_statement} := by\n{body}"
        return self.check_proof(source, preamble=task.preamble)


PROVED_MARKER = "--verified"
INVALID_MARKER = "BAD_SYNTAX"
TIMEOUT_MARKER = "LOOPS_FOREVER"


class MarkerVerifier:
    """Deterministic verification stub for mock runs (no Lean needed).

    A source "verifies" iff it contains the proved marker and no `sorry`
    token; a lemma statement is "valid" unless it contains the invalid
    marker; the timeout marker simulates a divergent tactic.  Elapsed
    times are fixed functions of the outcome so logs are byte-stable.
    """

    def __init__(
        self,
        timeout_s: float = 20.0,
        proved_marker: str = PROVED_MARKER,
        invalid_marker: str = INVALID_MARKER,
        timeout_marker: str = TIMEOUT_MARKER,
    ):
        self.timeout_s = timeout_s
        self.proved_marker = proved_marker
        self.invalid_marker = invalid_marker
        self.timeout_marker = timeout_marker

    def check_proof(self, source: str, preamble: str = "") -> VerificationResult:
        has_sorry = leansyntax.contains_sorry(source)
        if self.timeout_marker in source:
            return VerificationResult(
                status=VerificationStatus.TIMEOUT,
                messages=(),
                contains_sorry=has_sorry,
                elapsed=self.timeout_s,
            )
        if self.proved_marker in source and not has_sorry:
            return VerificationResult(
                status=VerificationStatus.PROVED,
                messages=(),
                contains_sorry=False,
                elapsed=0.25,
            )
        messages = ()
        if not has_sorry:
            messages = (
                ReplMessage(severity="error", text="stub: marker absent"),
            )
        return VerificationResult(
            status=VerificationStatus.FAILED,
            messages=messages,
            contains_sorry=has_sorry,
            elapsed=0.25,
        )

    def check_lemma_syntax(self, task: TheoremTask, lemma: Lemma) -> SyntaxValidity:
        if self.invalid_marker in lemma.statement_text:
            return SyntaxValidity.INVALID
        return SyntaxValidity.VALID

    def check_salvaged_proof(self, task, lemma, candidate_proof):
        if not candidate_proof.strip():
            return VerificationResult(
                status=VerificationStatus.FAILED,
                messages=(
                    ReplMessage(severity="error", text="empty candidate proof"),
                ),
                contains_sorry=False,
                elapsed=0.0,
            )
        return self.check_proof(
            f"theorem salvage_stub : True := by\n  {candidate_proof}"
        )
