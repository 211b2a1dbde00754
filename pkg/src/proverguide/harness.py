"""Benchmark execution: a worker pool over theorems.

Each worker leases one verifier session (or a stateless marker-mode
stub), runs one pipeline at a time, and writes through a per-theorem
buffered sink.  Log commit order is the dataset order regardless of
worker count, so log files are byte-identical across worker counts.
"""

from __future__ import annotations

import contextlib
import json
import os
import queue
import threading
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from proverguide.clients import make_client
from proverguide.config import ConfigError, RunConfig
from proverguide.dataset import DatasetEntry, to_tasks
from proverguide.guidance import GuidanceEngine
from proverguide.pipeline import TheoremPipeline
from proverguide.report import RunReport, build_report, render_table, report_to_json
from proverguide.runlog import (
    RunLogWriter,
    compact_for_resume,
    load_attempts,
    load_outcomes,
)
from proverguide.templates import TemplateSet
from proverguide.verifier import MarkerVerifier, ReplSpec, ReplVerifier, SessionPool

META_FILE = "run_meta.json"
REPORT_JSON = "report.json"
REPORT_TABLE = "report.txt"


class HarnessError(Exception):
    """Run-level failure that is not a config or dataset problem."""


class _VerifierSource:
    """Hands a verifier to each worker; REPL sessions are pooled."""

    def __init__(self, config: RunConfig):
        self.config = config
        self._pool: Optional[SessionPool] = None
        if config.verifier.mode == "repl":
            spec = ReplSpec(
                command=config.verifier.command,
                cwd=config.verifier.cwd,
                startup_timeout_s=config.verifier.startup_timeout_s,
                kill_grace_s=config.verifier.kill_grace_s,
            )
            self._pool = SessionPool(spec, config.verifier_sessions)

    def acquire(self) -> Tuple[object, Callable[[], None]]:
        if self._pool is None:
            return MarkerVerifier(timeout_s=self.config.verify_timeout_s), (
                lambda: None
            )
        session = self._pool.acquire()
        return (
            ReplVerifier(session, timeout_s=self.config.verify_timeout_s),
            lambda: self._pool.release(session),
        )

    def close(self) -> None:
        if self._pool is not None:
            self._pool.close()


def _load_meta(out_dir: str) -> Optional[dict]:
    path = os.path.join(out_dir, META_FILE)
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_meta(out_dir: str, config: RunConfig) -> None:
    from proverguide import __version__
    from proverguide.report import config_snapshot

    payload = {
        "config_hash": config.content_hash(),
        "package_version": __version__,
        "config": config_snapshot(config),
    }
    with open(os.path.join(out_dir, META_FILE), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_out_dir(
    out_dir: str, config: RunConfig, resume: bool
) -> Dict[str, dict]:
    """Returns the already-completed outcome records (name -> record)."""
    os.makedirs(out_dir, exist_ok=True)
    outcomes_path = os.path.join(out_dir, "outcomes.jsonl")
    has_logs = os.path.exists(outcomes_path) and os.path.getsize(outcomes_path) > 0
    if resume:
        meta = _load_meta(out_dir)
        if meta is None and has_logs:
            raise ConfigError(
                f"cannot resume {out_dir!r}: no {META_FILE} to check the config against"
            )
        if meta is not None and meta.get("config_hash") != config.content_hash():
            raise ConfigError(
                "resume refused: the configuration differs from the original run"
            )
        completed = compact_for_resume(out_dir)
    else:
        if has_logs:
            raise ConfigError(
                f"output directory {out_dir!r} already holds a run;"
                " pass --resume or choose a fresh directory"
            )
        completed = {}
    _write_meta(out_dir, config)
    return completed


def run_benchmark(
    config: RunConfig,
    entries: Sequence[DatasetEntry],
    out_dir: str,
    resume: bool = False,
    ks: Optional[Iterable[int]] = None,
) -> RunReport:
    tasks = to_tasks(entries, config.preamble)
    completed = _prepare_out_dir(out_dir, config, resume)
    todo = [task for task in tasks if task.name not in completed]

    writer = RunLogWriter(out_dir, [task.name for task in todo])
    clients = {role: make_client(cfg) for role, cfg in config.endpoints.items()}
    templates = TemplateSet.load(config.template_dir)
    engine = GuidanceEngine(
        templates,
        reasoner=clients.get("reasoner"),
        worker=clients.get("worker"),
    )
    source = _VerifierSource(config)

    work: "queue.Queue" = queue.Queue()
    for task in todo:
        work.put(task)
    failures: List[BaseException] = []

    def run_worker() -> None:
        verifier, release = source.acquire()
        try:
            while True:
                try:
                    task = work.get_nowait()
                except queue.Empty:
                    return
                sink = writer.begin(task.name)
                outcome = TheoremPipeline(
                    task,
                    config,
                    clients["prover"],
                    verifier,
                    templates,
                    engine,
                    sink,
                ).run()
                writer.complete(task.name, outcome)
        except BaseException as exc:  # surfaced after join
            failures.append(exc)
        finally:
            release()

    if todo:
        threads = [
            threading.Thread(target=run_worker, name=f"prover-worker-{i}")
            for i in range(max(1, min(config.workers, len(todo))))
        ]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
    source.close()
    if failures:
        with contextlib.suppress(Exception):
            writer.close()
        raise HarnessError(f"worker failed: {failures[0]!r}") from failures[0]
    writer.close()

    report = build_run_report(out_dir, config, [task.name for task in tasks], ks)
    with open(os.path.join(out_dir, REPORT_JSON), "w", encoding="utf-8") as fh:
        fh.write(report_to_json(report))
    with open(os.path.join(out_dir, REPORT_TABLE), "w", encoding="utf-8") as fh:
        fh.write(render_table(report))
    return report


def build_run_report(
    out_dir: str,
    config: RunConfig,
    name_order: Optional[Sequence[str]] = None,
    ks: Optional[Iterable[int]] = None,
) -> RunReport:
    """Report purely from on-disk records, so `prove report` over a log
    directory and the in-run report agree."""
    outcome_records = load_outcomes(out_dir)
    if name_order is not None:
        by_name = {rec["theorem"]: rec for rec in outcome_records}
        outcome_records = [by_name[n] for n in name_order if n in by_name]
    attempts = load_attempts(out_dir)
    return build_report(outcome_records, attempts, config, ks=ks)
