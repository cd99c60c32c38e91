"""Episode metrics: success, timing, clearance, effort, prediction quality.

The clearance metric is computed on the continuous piecewise-linear path
(analytic point-to-segment distance per obstacle), not on the visited
samples, so a straight segment grazing a keep-out circle is scored by its
true closest approach.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyTrace
from ..intent import ObstacleSet


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome of one closed-loop episode."""

    success: bool
    time_to_goal: float  # [s], inf when the goal was never reached
    min_obstacle_distance: float  # [m] over the continuous path, inf if no obstacles
    path_length: float  # [m]
    human_effort: float  # integral of ||uH_meas||^2 dt
    mean_prediction_cost_first10s: float
    mean_prediction_cost_last10s: float
    trace: tuple = field(repr=False, default=())  # per-tick records


def point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each row of ``points`` to the segment [a, b]."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(points[:, 0] - a[0], points[:, 1] - a[1])
    s = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    closest = a + s[:, None] * ab
    d = points - closest
    return np.hypot(d[:, 0], d[:, 1])


def path_min_distance(path: np.ndarray, obstacles: ObstacleSet) -> float:
    """Minimum clearance between a polyline and any obstacle center."""
    if not len(obstacles) or path.shape[0] == 0:
        return np.inf
    centers = obstacles.as_array()
    if path.shape[0] == 1:
        return float(
            np.hypot(centers[:, 0] - path[0, 0], centers[:, 1] - path[0, 1]).min()
        )
    best = np.inf
    for a, b in zip(path[:-1], path[1:]):
        best = min(best, float(point_segment_distance(centers, a, b).min()))
    return best


def _window_mean(values: np.ndarray, mask: np.ndarray) -> float:
    return float(values[mask].mean()) if mask.any() else float("nan")


def compute_metrics(
    trace,
    obstacles: ObstacleSet,
    final_state=None,
    success: bool = False,
    time_to_goal: float = np.inf,
) -> EpisodeResult:
    """Aggregate a per-tick trace into an EpisodeResult.

    ``trace`` records hold the pre-step state of each tick; pass the terminal
    state as ``final_state`` so the last motion segment is included in the
    path metrics (a replayed trace without it just scores the logged knots).
    """
    if not trace:
        raise EmptyTrace("metrics requested for an empty trace")
    ts = trace[0].ts
    knots = [rec.state.position for rec in trace]
    if final_state is not None:
        knots.append(final_state.position)
    path = np.asarray(knots, dtype=float)
    seg = np.diff(path, axis=0)
    path_length = float(np.hypot(seg[:, 0], seg[:, 1]).sum()) if len(path) > 1 else 0.0

    u_meas = np.asarray([rec.uH_meas.as_array() for rec in trace])
    effort = float(np.einsum("ij,ij->", u_meas, u_meas) * ts)

    t = np.asarray([rec.t for rec in trace])
    cost_j = np.asarray([rec.prediction_cost for rec in trace])
    t_end = t[-1] + ts
    first10 = _window_mean(cost_j, t < 10.0)
    last10 = _window_mean(cost_j, t >= t_end - 10.0)

    return EpisodeResult(
        success=success,
        time_to_goal=time_to_goal,
        min_obstacle_distance=path_min_distance(path, obstacles),
        path_length=path_length,
        human_effort=effort,
        mean_prediction_cost_first10s=first10,
        mean_prediction_cost_last10s=last10,
        trace=tuple(trace),
    )


def empty_result() -> EpisodeResult:
    """Metrics of an episode that never ticked (duration limit of zero)."""
    return EpisodeResult(
        success=False,
        time_to_goal=np.inf,
        min_obstacle_distance=np.inf,
        path_length=0.0,
        human_effort=0.0,
        mean_prediction_cost_first10s=float("nan"),
        mean_prediction_cost_last10s=float("nan"),
        trace=(),
    )
