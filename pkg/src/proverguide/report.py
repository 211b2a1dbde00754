"""Pass@k scoring and the run report.

The report is built from plain log records (the same dicts that live in
attempts.jsonl / outcomes.jsonl), so re-running `prove report` over a
log directory reproduces the in-run report byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from proverguide import __version__
from proverguide.config import RunConfig
from proverguide.tasks import is_lemma_stage

SCHEMA_VERSION = 1

# Three-way timing split: guidance work done once per theorem, guidance
# work only done when the lemma route is taken, and the per-call prover
# costs that scale with the budget.
ONE_TIME_GUIDANCE_TASKS = ("nl_proof", "summary")
LEMMA_PROCESSING_TASKS = ("selection", "lemma_proofs")


def compute_pass_at_k(outcomes: Sequence[Mapping], k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not outcomes:
        return 0.0
    hits = sum(
        1
        for out in outcomes
        if out.get("solving_attempt_index") is not None
        and out["solving_attempt_index"] <= k
    )
    return hits / len(outcomes)


def pass_curve(outcomes: Sequence[Mapping], budget: int) -> Tuple[float, ...]:
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if not outcomes:
        return tuple(0.0 for _ in range(budget))
    indices = [
        out["solving_attempt_index"]
        for out in outcomes
        if out.get("solving_attempt_index") is not None
    ]
    total = len(outcomes)
    return tuple(
        sum(1 for idx in indices if idx <= j) / total for j in range(1, budget + 1)
    )


def _mean_entry(values: List[float]) -> Dict[str, float]:
    if not values:
        return {"mean_seconds": 0.0, "count": 0}
    return {
        "mean_seconds": round(sum(values) / len(values), 6),
        "count": len(values),
    }


def aggregate_timings(
    outcomes: Sequence[Mapping], attempts: Sequence[Mapping]
) -> Dict[str, Dict]:
    guidance: Dict[str, List[float]] = {}
    for out in outcomes:
        for task, seconds in (out.get("guidance_timings") or {}).items():
            guidance.setdefault(task, []).append(seconds)

    gen = [rec["gen_seconds"] for rec in attempts]
    verify = [rec["verify_seconds"] for rec in attempts]
    stage_counts: Dict[str, int] = {}
    for rec in attempts:
        stage = rec["stage"]
        group = "lemma" if is_lemma_stage(stage) else stage
        stage_counts[group] = stage_counts.get(group, 0) + 1

    return {
        "one_time_guidance": {
            task: _mean_entry(guidance.get(task, []))
            for task in ONE_TIME_GUIDANCE_TASKS
        },
        "lemma_processing": {
            task: _mean_entry(guidance.get(task, []))
            for task in LEMMA_PROCESSING_TASKS
        },
        "per_attempt_prover": {
            "generation": _mean_entry(gen),
            "verification": _mean_entry(verify),
            "attempts_by_stage": dict(sorted(stage_counts.items())),
        },
    }


@dataclass(frozen=True)
class RunReport:
    schema_version: int
    config_snapshot: Dict
    identifiers: Dict[str, str]
    theorems: int
    solved: int
    total_attempts: int
    pass_at: Dict[str, float]
    pass_curve: Tuple[float, ...]
    timing: Dict[str, Dict]
    outcomes: Tuple[Dict, ...]

    def __post_init__(self):
        curve = self.pass_curve
        if any(b < a for a, b in zip(curve, curve[1:])):
            raise ValueError("pass curve must be monotone non-decreasing")
        if curve and self.theorems:
            if abs(curve[-1] - self.solved / self.theorems) > 1e-12:
                raise ValueError("pass_curve(B) must equal the solved fraction")


def config_snapshot(config: RunConfig) -> Dict:
    snap = dataclasses.asdict(config)
    snap["verifier"]["command"] = list(snap["verifier"]["command"])
    return snap


def _identifiers_from_snapshot(snapshot: Mapping, version: str) -> Dict[str, str]:
    ids = {
        "package_version": version,
        "verifier_mode": snapshot["verifier"]["mode"],
    }
    for role, endpoint in sorted(snapshot.get("endpoints", {}).items()):
        ids[f"model_{role}"] = endpoint.get("model") or endpoint.get("base_url", "")
    return ids


def report_from_records(
    outcomes: Sequence[Mapping],
    attempts: Sequence[Mapping],
    snapshot: Mapping,
    ks: Optional[Iterable[int]] = None,
    package_version: Optional[str] = None,
) -> RunReport:
    budget = snapshot["budget"]
    solved = sum(1 for out in outcomes if out.get("solved"))
    wanted_ks = sorted(set(ks) if ks is not None else {budget})
    return RunReport(
        schema_version=SCHEMA_VERSION,
        config_snapshot=dict(snapshot),
        identifiers=_identifiers_from_snapshot(
            snapshot, package_version or __version__
        ),
        theorems=len(outcomes),
        solved=solved,
        total_attempts=sum(out.get("consumed", 0) for out in outcomes),
        pass_at={str(k): compute_pass_at_k(outcomes, k) for k in wanted_ks},
        pass_curve=pass_curve(outcomes, budget),
        timing=aggregate_timings(outcomes, attempts),
        outcomes=tuple(
            {
                "theorem": out["theorem"],
                "solved": bool(out.get("solved")),
                "solving_attempt_index": out.get("solving_attempt_index"),
                "consumed": out.get("consumed", 0),
                "phase_trace": list(out.get("phase_trace", ())),
            }
            for out in outcomes
        ),
    )


def build_report(
    outcomes: Sequence[Mapping],
    attempts: Sequence[Mapping],
    config: RunConfig,
    ks: Optional[Iterable[int]] = None,
) -> RunReport:
    return report_from_records(outcomes, attempts, config_snapshot(config), ks=ks)


def report_to_json(report: RunReport) -> str:
    payload = dataclasses.asdict(report)
    payload["pass_curve"] = list(report.pass_curve)
    payload["outcomes"] = [dict(o) for o in report.outcomes]
    return json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def render_table(report: RunReport) -> str:
    lines = []
    lines.append(f"theorems: {report.theorems}   solved: {report.solved}")
    lines.append(f"total prover attempts: {report.total_attempts}")
    for key in sorted(report.pass_at, key=int):
        lines.append(f"pass@{key}: {report.pass_at[key]:.4f}")
    lines.append("")
    lines.append("timing (mean seconds per theorem/component):")
    for section in ("one_time_guidance", "lemma_processing"):
        for task, entry in report.timing[section].items():
            lines.append(
                f"  {task:<14} {entry['mean_seconds']:>10.3f}s  (n={entry['count']})"
            )
    prover = report.timing["per_attempt_prover"]
    for key in ("generation", "verification"):
        entry = prover[key]
        lines.append(
            f"  {key:<14} {entry['mean_seconds']:>10.3f}s  (n={entry['count']}, per attempt)"
        )
    lines.append("")
    width = max((len(o["theorem"]) for o in report.outcomes), default=4)
    lines.append(f"{'name':<{width}}  solved  attempt  consumed")
    for out in report.outcomes:
        idx = out["solving_attempt_index"]
        lines.append(
            f"{out['theorem']:<{width}}  {'yes' if out['solved'] else 'no ':<6}"
            f"  {('-' if idx is None else str(idx)):>7}  {out['consumed']:>8}"
        )
    return "\n".join(lines) + "\n"
