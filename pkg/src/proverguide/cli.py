"""The `prove` command line: run a benchmark, re-report a log directory,
or run the lemma extractor over a Lean file."""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from proverguide import leansyntax
from proverguide.clients import ClientError
from proverguide.config import ConfigError, load_config
from proverguide.dataset import DatasetError, load_dataset
from proverguide.harness import HarnessError, _load_meta, run_benchmark
from proverguide.report import render_table, report_from_records, report_to_json
from proverguide.runlog import RunLogError, load_attempts, load_outcomes
from proverguide.verifier import ReplError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFRASTRUCTURE = 2
EXIT_DATASET = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; keep 2 reserved for
    # infrastructure failures and treat misuse as a config error.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="prove",
        description="LLM-guided theorem proving benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a dataset through the pipeline")
    run.add_argument("--dataset", required=True, help="JSONL theorem file")
    run.add_argument("--config", required=True, help="TOML run configuration")
    run.add_argument("--budget", type=int, help="prover generations per theorem")
    run.add_argument(
        "--initial-attempts", type=int, help="direct attempts before lemma guidance"
    )
    run.add_argument("--max-lemmas", type=int, help="lemma selection cap")
    run.add_argument(
        "--verify-timeout", type=float, help="per-check Lean timeout (seconds)"
    )
    run.add_argument("--workers", type=int, help="parallel theorem workers")
    run.add_argument(
        "--resume", action="store_true", help="continue an interrupted run"
    )
    run.add_argument("--out", default="run_out", help="log/report directory")

    rep = sub.add_parser("report", help="recompute the report from a log directory")
    rep.add_argument("--log", required=True, help="directory written by `prove run`")
    rep.add_argument("--k", help="comma-separated pass@k cutoffs, e.g. 32,128")
    rep.add_argument(
        "--json", action="store_true", help="print machine JSON instead of the table"
    )

    ext = sub.add_parser("extract", help="list have-lemmas found in a Lean file")
    ext.add_argument("--file", required=True, help="Lean source to scan")
    return parser


def _parse_ks(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --k value {text!r}: {exc}") from exc
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"bad --k value {text!r}: cutoffs must be >= 1")
    return ks


def cmd_run(args) -> int:
    overrides = {}
    if args.budget is not None:
        overrides["budget"] = args.budget
    if args.initial_attempts is not None:
        overrides["initial_attempts"] = args.initial_attempts
    if args.max_lemmas is not None:
        overrides["max_lemmas"] = args.max_lemmas
    if args.verify_timeout is not None:
        overrides["verify_timeout_s"] = args.verify_timeout
    if args.workers is not None:
        overrides["workers"] = args.workers
    config = load_config(args.config, overrides)
    entries = load_dataset(args.dataset)
    report = run_benchmark(
        config, entries, args.out, resume=args.resume
    )
    sys.stdout.write(render_table(report))
    sys.stdout.write(f"\nlogs and report written to {args.out}\n")
    return EXIT_OK


def cmd_report(args) -> int:
    meta = _load_meta(args.log)
    if meta is None or "config" not in meta:
        raise ConfigError(
            f"{args.log!r} has no usable run metadata; was it written by `prove run`?"
        )
    ks = _parse_ks(args.k)
    report = report_from_records(
        load_outcomes(args.log),
        load_attempts(args.log),
        meta["config"],
        ks=ks,
        package_version=meta.get("package_version"),
    )
    if args.json:
        sys.stdout.write(report_to_json(report))
    else:
        sys.stdout.write(render_table(report))
    return EXIT_OK


def cmd_extract(args) -> int:
    try:
        with open(args.file, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DatasetError(f"cannot read {args.file!r}: {exc}") from exc
    for lemma in leansyntax.extract_have_statements(text):
        sys.stdout.write(
            json.dumps(
                {
                    "binder_name": lemma.binder_name,
                    "statement": lemma.normalized_statement,
                    "proofs": list(lemma.recorded_proofs),
                    "pattern_binder": lemma.pattern_binder,
                },
                ensure_ascii=False,
            )
            + "\n"
        )
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "report": cmd_report, "extract": cmd_extract}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except DatasetError as exc:
        sys.stderr.write(f"dataset error: {exc}\n")
        return EXIT_DATASET
    except (HarnessError, ClientError, ReplError, RunLogError, OSError) as exc:
        sys.stderr.write(f"infrastructure error: {exc}\n")
        return EXIT_INFRASTRUCTURE


if __name__ == "__main__":
    sys.exit(main(argv=sys.argv[1:]))
