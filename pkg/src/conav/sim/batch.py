"""Batch episode runner: a config grid crossed with scenarios and seeds,
executed with bounded parallelism and flattened into a CSV results table.

One episode failure becomes one row with its error message; it never aborts
the rest of the grid.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ..adaptation import AdaptationConfig
from ..arbitration import BlendConfig
from ..intent import IntentParams
from ..nmpc import NmpcConfig
from .episode import run_episode
from .operators import OperatorSpec, build_operator
from .scenario import Scenario, resolve_scenario

CSV_COLUMNS = (
    "scenario", "seed", "config_id", "success",
    "time_to_goal", "min_dist", "path_length", "effort", "error",
)

# Override keys routed to each config dataclass; anything else is rejected
# up front so a typoed grid fails before burning an hour of episodes.
_NMPC_FIELDS = frozenset(f.name for f in dataclasses.fields(NmpcConfig))
_BLEND_FIELDS = frozenset(f.name for f in dataclasses.fields(BlendConfig))
_ADAPT_FIELDS = frozenset(f.name for f in dataclasses.fields(AdaptationConfig))


@dataclasses.dataclass(frozen=True)
class EpisodeJob:
    """One grid cell: everything needed to run a single episode."""

    scenario: Scenario
    seed: int
    config_id: str
    overrides: dict
    operator_spec: OperatorSpec
    duration_limit: float
    theta0: IntentParams | None


def _split_overrides(overrides: dict):
    nmpc, blnd, adpt = {}, {}, {}
    for key, value in overrides.items():
        routed = False
        if key in _NMPC_FIELDS:
            nmpc[key] = value
            routed = True
        if key in _BLEND_FIELDS:
            blnd[key] = value
            routed = True
        if key in _ADAPT_FIELDS:
            adpt[key] = value
            routed = True
        if not routed:
            raise ValueError(f"unknown config override {key!r}")
    # blend_lambda lives in both the planner and the arbitration layer;
    # the split above keeps them consistent automatically.
    return nmpc, blnd, adpt


def run_job(job: EpisodeJob) -> dict:
    """Execute one episode and flatten it into a results-table row."""
    row = {
        "scenario": job.scenario.name,
        "seed": job.seed,
        "config_id": job.config_id,
        "success": False,
        "time_to_goal": math.inf,
        "min_dist": math.nan,
        "path_length": math.nan,
        "effort": math.nan,
        "error": "",
    }
    try:
        nmpc_kw, blend_kw, adapt_kw = _split_overrides(job.overrides)
        result = run_episode(
            job.scenario,
            build_operator(job.operator_spec),
            nmpc_cfg=NmpcConfig(**nmpc_kw),
            blend_cfg=BlendConfig(**blend_kw),
            adapt_cfg=AdaptationConfig(**adapt_kw),
            duration_limit=job.duration_limit,
            seed=job.seed,
            theta0=job.theta0,
        )
    except Exception as exc:  # noqa: BLE001 - a bad cell must not kill the grid
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    row.update(
        success=result.success,
        time_to_goal=result.time_to_goal,
        min_dist=result.min_obstacle_distance,
        path_length=result.path_length,
        effort=result.human_effort,
    )
    return row


def run_batch(
    scenarios,
    config_grid: dict,
    operator_spec: OperatorSpec,
    repetitions: int = 1,
    seed: int = 0,
    duration_limit: float = 120.0,
    theta0: IntentParams | None = None,
    max_workers: int | None = None,
    out_path: str | Path | None = None,
):
    """Run the cross-product of scenarios x configs x repetitions.

    ``config_grid`` maps a config id to a dict of overrides on the NMPC,
    blending, and adaptation configs (e.g. {"lam35_w1e3": {"blend_lambda":
    0.35, "slack_weight": 1e3}}).  Episode k of a cell runs with seed
    ``seed + k`` so repetitions get distinct but reproducible draws.

    Returns (rows, summary): the flat table and a per-config aggregate of
    success rate and mean metrics over its successful rows.
    """
    jobs = [
        EpisodeJob(
            scenario=resolve_scenario(sc),
            seed=seed + rep,
            config_id=config_id,
            overrides=overrides,
            operator_spec=operator_spec,
            duration_limit=duration_limit,
            theta0=theta0,
        )
        for sc in scenarios
        for config_id, overrides in config_grid.items()
        for rep in range(repetitions)
    ]
    if max_workers is None or max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(run_job, jobs))
    else:
        rows = [run_job(job) for job in jobs]

    if out_path is not None:
        write_results_csv(out_path, rows)
    return rows, summarize(rows)


def summarize(rows) -> dict:
    """Per-config success rate and metric means (over successful rows)."""
    summary: dict[str, dict] = {}
    for config_id in sorted({row["config_id"] for row in rows}):
        cell = [row for row in rows if row["config_id"] == config_id]
        good = [row for row in cell if row["success"]]
        summary[config_id] = {
            "episodes": len(cell),
            "success_rate": len(good) / len(cell),
            "mean_time_to_goal": _mean(good, "time_to_goal"),
            "mean_min_dist": _mean(good, "min_dist"),
            "mean_path_length": _mean(good, "path_length"),
            "mean_effort": _mean(good, "effort"),
        }
    return summary


def _mean(rows, key: str) -> float:
    return sum(r[key] for r in rows) / len(rows) if rows else math.nan


def write_results_csv(path: str | Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def read_results_csv(path: str | Path) -> list:
    with open(path, newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]
