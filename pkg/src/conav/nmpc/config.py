"""Planner configuration, reference trajectories, and solution containers."""

from __future__ import annotations

import dataclasses

import numpy as np

from ..dynamics import RobotState, wrap_angle
from ..intent import GoalPose


@dataclasses.dataclass(frozen=True)
class NmpcConfig:
    horizon: int = 100                # steps N; horizon covers N*ts seconds
    ts: float = 0.1                   # s
    blend_lambda: float = 0.35        # authority split applied inside the prediction
    cbf_gamma: float = 0.1            # barrier decay rate per step
    state_weights: tuple = (4.0, 4.0, 4.0)      # Q_R diagonal
    terminal_weights: tuple = (40.0, 40.0, 40.0)  # P_R diagonal
    robot_input_weights: tuple = (0.4, 0.2)     # R_R diagonal
    human_input_weights: tuple = (0.02, 0.02)   # R_H diagonal
    slack_weight: float = 1.0e3       # w, quadratic penalty on barrier slack
    input_bounds: tuple = (0.4, 0.8)  # (v_max, omega_max) box on the robot input
    max_sqp_iters: int = 10
    qp_tolerance: float = 1.0e-8
    reference_mode: str = "constant"  # or "interpolated"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.ts <= 0:
            raise ValueError(f"ts must be positive, got {self.ts}")
        if not 0.0 <= self.blend_lambda <= 1.0:
            raise ValueError(f"blend_lambda must lie in [0, 1], got {self.blend_lambda}")
        if not 0.0 < self.cbf_gamma <= 1.0:
            raise ValueError(f"cbf_gamma must lie in (0, 1], got {self.cbf_gamma}")
        for name in ("state_weights", "terminal_weights", "robot_input_weights",
                     "human_input_weights"):
            vals = getattr(self, name)
            if any(v < 0 for v in vals):
                raise ValueError(f"{name} entries must be >= 0, got {vals}")
        if self.slack_weight <= 0:
            raise ValueError(f"slack_weight must be positive, got {self.slack_weight}")
        if any(b < 0 for b in self.input_bounds):
            raise ValueError(f"input_bounds must be >= 0, got {self.input_bounds}")
        if self.reference_mode not in ("constant", "interpolated"):
            raise ValueError(f"unknown reference_mode {self.reference_mode!r}")


@dataclasses.dataclass(frozen=True)
class ReferenceTrajectory:
    """Per-knot pose targets, one for each of the N+1 horizon knots."""

    poses: np.ndarray  # (N+1, 3)

    def __post_init__(self):
        poses = np.asarray(self.poses, dtype=float)
        if poses.ndim != 2 or poses.shape[1] != 3:
            raise ValueError(f"reference poses must be (N+1, 3), got {poses.shape}")
        poses = poses.copy()
        poses.setflags(write=False)
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return self.poses.shape[0]


def build_reference(
    goal: GoalPose,
    horizon: int,
    start: RobotState | None = None,
    mode: str = "constant",
) -> ReferenceTrajectory:
    """Reference for the tracking cost.

    "constant" repeats the goal pose at every knot, which is what the
    controller runs with.  "interpolated" blends linearly from the current
    pose to the goal (shortest-path in yaw); useful for diagnostics where a
    feasible-looking path makes the cost surface easier to read.
    """
    n_knots = horizon + 1
    g = np.array([goal.gx, goal.gy, goal.gyaw], dtype=float)
    if mode == "constant" or start is None:
        poses = np.tile(g, (n_knots, 1))
    elif mode == "interpolated":
        s = np.array([start.x, start.y, start.yaw], dtype=float)
        frac = np.linspace(0.0, 1.0, n_knots)[:, None]
        poses = s[None, :] + frac * (g - s)[None, :]
        dyaw = wrap_angle(g[2] - s[2])
        poses[:, 2] = s[2] + frac[:, 0] * dyaw
    else:
        raise ValueError(f"unknown reference mode {mode!r}")
    return ReferenceTrajectory(poses)


@dataclasses.dataclass(frozen=True)
class HorizonSolution:
    """Result of one receding-horizon solve.

    Arrays are defensive copies and read-only; ``states`` has N+1 rows with
    ``states[0]`` equal to the measured state the solve was pinned to.
    """

    states: np.ndarray        # (N+1, 3)
    robot_inputs: np.ndarray  # (N, 2)
    human_inputs: np.ndarray  # (N, 2)
    slacks: np.ndarray        # (N,)
    sqp_iterations: int = 0
    max_constraint_violation: float = np.inf
    solve_time: float = 0.0
    converged: bool = False

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        ur = np.array(self.robot_inputs, dtype=float)
        uh = np.array(self.human_inputs, dtype=float)
        dl = np.array(self.slacks, dtype=float)
        n = ur.shape[0]
        if states.shape != (n + 1, 3) or uh.shape != (n, 2) or dl.shape != (n,):
            raise ValueError(
                "inconsistent horizon arrays: "
                f"states {states.shape}, robot {ur.shape}, human {uh.shape}, "
                f"slacks {dl.shape}"
            )
        for arr, name in ((states, "states"), (ur, "robot_inputs"),
                          (uh, "human_inputs"), (dl, "slacks")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def horizon(self) -> int:
        return self.robot_inputs.shape[0]

    def first_robot_input(self) -> np.ndarray:
        return self.robot_inputs[0].copy()


def warm_shift(solution: HorizonSolution, measured: RobotState | None = None) -> HorizonSolution:
    """Shift a solution one step left for use as the next tick's initial
    guess: duplicate the final knot/input, zero the new final slack, and
    (optionally) re-pin the first state to the new measurement.
    """
    xs = np.vstack([solution.states[1:], solution.states[-1:]])
    if measured is not None:
        xs[0] = measured.as_array()
    ur = np.vstack([solution.robot_inputs[1:], solution.robot_inputs[-1:]])
    uh = np.vstack([solution.human_inputs[1:], solution.human_inputs[-1:]])
    dl = np.concatenate([solution.slacks[1:], [0.0]])
    return HorizonSolution(xs, ur, uh, dl)


def trajectory_cost(
    xs: np.ndarray,
    ur: np.ndarray,
    uh: np.ndarray,
    dl: np.ndarray,
    ref: np.ndarray,
    cfg: NmpcConfig,
) -> float:
    """Objective value for a candidate horizon (yaw errors wrapped)."""
    xs = np.asarray(xs, float)
    ref = np.asarray(ref, float)
    e = xs - ref
    e[:, 2] = wrap_angle(e[:, 2])
    qr = np.asarray(cfg.state_weights, float)
    pr = np.asarray(cfg.terminal_weights, float)
    rr = np.asarray(cfg.robot_input_weights, float)
    rh = np.asarray(cfg.human_input_weights, float)
    stage = float(np.einsum("kj,j,kj->", e[:-1], qr, e[:-1]))
    terminal = float(e[-1] @ (pr * e[-1]))
    inputs = float(np.einsum("kj,j,kj->", ur, rr, ur)) + float(
        np.einsum("kj,j,kj->", uh, rh, uh)
    )
    slack = float(cfg.slack_weight * np.dot(dl, dl))
    return stage + terminal + inputs + slack


def cost(solution: HorizonSolution, ref: ReferenceTrajectory, cfg: NmpcConfig) -> float:
    return trajectory_cost(
        solution.states,
        solution.robot_inputs,
        solution.human_inputs,
        solution.slacks,
        ref.poses,
        cfg,
    )
