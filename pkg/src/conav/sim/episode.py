"""The 10 Hz closed loop: operator command, receding-horizon solve, blend,
plant step, intent-parameter update.

``ControlLoop`` owns one tick of that sequence and all cross-tick state
(robot pose, warm start, theta estimate), so the offline ``run_episode``
below and the live session host run literally the same code path.  Simulated
time is synchronous: the solve is logically instantaneous inside its tick
and its wall-clock duration is only recorded, never injected as delay.  An
optional one-tick actuation delay emulates the real pipeline instead.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from ..adaptation import AdaptationConfig, AdaptationRecord, prediction_cost, update
from ..arbitration import BlendConfig, blend
from ..dynamics import DynamicsConfig, RobotState, VelocityCommand, step, wrap_angle
from ..intent import IntentParams
from ..nmpc import NmpcConfig, NmpcSolver, build_reference, cost as horizon_cost
from ..safety import BarrierConfig, h_values, psi
from .metrics import EpisodeResult, compute_metrics, empty_result
from .scenario import Scenario

GOAL_POSITION_TOL = 0.2  # [m]
GOAL_YAW_TOL = 0.3  # [rad]

DEFAULT_THETA0 = IntentParams.make_tied(0.4, 5.0, 2.0, 2.0)


@dataclasses.dataclass(frozen=True)
class TickRecord:
    """Everything observable about one executed tick.

    ``state`` is the pose the tick started from: the operator command, the
    solve, the blend, and the safety certificate are all evaluated there,
    and the plant then moves away from it.  ``theta_hat`` is the estimate
    the solver used (before this tick's adaptation update).
    """

    t: float  # [s] tick start time
    ts: float  # [s] tick length
    state: RobotState
    uH_meas: VelocityCommand
    uH_pred: VelocityCommand
    uR: VelocityCommand
    u_applied: VelocityCommand
    lambda_effective: float
    theta_hat: IntentParams
    h_min: float  # min barrier value at `state`
    psi_min: float  # min component of the one-step decay certificate
    delta0: float  # first-step slack of the accepted plan
    cost: float  # objective value of the accepted plan
    solver_iters: int
    solver_violation: float
    solver_time: float
    fallback_used: bool
    prediction_cost: float  # J between predicted and measured human action
    adaptation: AdaptationRecord = dataclasses.field(repr=False, default=None)
    horizon_states: np.ndarray = dataclasses.field(repr=False, default=None)

    def to_json_dict(self) -> dict:
        """The episode-log record shape (one JSON line per tick)."""
        return {
            "t": round(self.t, 9),
            "state": _floats(self.state.as_array()),
            "uH_meas": _floats(self.uH_meas.as_array()),
            "uH_pred": _floats(self.uH_pred.as_array()),
            "uR": _floats(self.uR.as_array()),
            "u_applied": _floats(self.u_applied.as_array()),
            "lambda_effective": self.lambda_effective,
            "theta_hat": _floats(self.theta_hat.as_array()),
            "h_min": _finite_or_none(self.h_min),
            "psi_min": _finite_or_none(self.psi_min),
            "delta0": self.delta0,
            "cost": self.cost,
            "solver": {
                "iters": self.solver_iters,
                "viol": _finite_or_none(self.solver_violation),
                "time": self.solver_time,
            },
        }


def _floats(arr) -> list:
    return [float(v) for v in np.asarray(arr, dtype=float)]


def _finite_or_none(v: float):
    return float(v) if math.isfinite(v) else None


def _adaptation_json(t: float, rec: AdaptationRecord) -> dict:
    return {
        "kind": "adaptation",
        "t": round(t, 9),
        "theta_before": _floats(rec.theta_before.as_array()),
        "theta_after": _floats(rec.theta_after.as_array()),
        "predicted": _floats(rec.predicted.as_array()),
        "measured": _floats(rec.measured.as_array()),
        "cost_J": rec.cost_J,
        "skipped": rec.skipped,
        "skip_reason": rec.skip_reason,
    }


class ControlLoop:
    """Stateful tick executor shared by offline episodes and live sessions."""

    def __init__(
        self,
        scenario: Scenario,
        nmpc_cfg: NmpcConfig | None = None,
        blend_cfg: BlendConfig | None = None,
        adapt_cfg: AdaptationConfig | None = None,
        dyn_cfg: DynamicsConfig | None = None,
        theta0: IntentParams | None = None,
        delay_one_tick: bool = False,
    ):
        self.scenario = scenario
        self.nmpc_cfg = nmpc_cfg or NmpcConfig()
        self.blend_cfg = blend_cfg or BlendConfig()
        self.adapt_cfg = adapt_cfg or AdaptationConfig()
        self.dyn_cfg = dyn_cfg or DynamicsConfig(ts=self.nmpc_cfg.ts)
        if self.dyn_cfg.ts != self.nmpc_cfg.ts:
            raise ValueError(
                f"plant step {self.dyn_cfg.ts} and horizon step "
                f"{self.nmpc_cfg.ts} must agree"
            )
        self.delay_one_tick = delay_one_tick
        self._barrier = BarrierConfig(gamma=self.nmpc_cfg.cbf_gamma)
        self._ref = build_reference(scenario.goal, self.nmpc_cfg.horizon)
        self._solver = NmpcSolver(self.nmpc_cfg)
        self.robot = scenario.start
        self.theta_hat = theta0 or DEFAULT_THETA0
        self.tick_index = 0
        self._held_uR: VelocityCommand | None = None  # one-tick delay buffer

    @property
    def t(self) -> float:
        return self.tick_index * self.nmpc_cfg.ts

    @property
    def last_solution(self):
        return self._solver.last_solution

    def goal_reached(
        self,
        position_tol: float = GOAL_POSITION_TOL,
        yaw_tol: float = GOAL_YAW_TOL,
    ) -> bool:
        goal = self.scenario.goal
        dist = math.hypot(self.robot.x - goal.gx, self.robot.y - goal.gy)
        return dist <= position_tol and abs(wrap_angle(self.robot.yaw - goal.gyaw)) <= yaw_tol

    def tick(self, uH_meas: VelocityCommand) -> TickRecord:
        """Execute one closed-loop step with the given measured human command."""
        x = self.robot
        t = self.t
        sol, fallback = self._solver.solve_tick(x, self.theta_hat, self.scenario)
        uR_now = VelocityCommand.from_array(sol.first_robot_input())
        uH_pred = VelocityCommand.from_array(sol.human_inputs[0])

        if self.delay_one_tick:
            uR = self._held_uR if self._held_uR is not None else VelocityCommand(0.0, 0.0)
            self._held_uR = uR_now
        else:
            uR = uR_now
        u_applied, lam_eff = blend(uR, uH_meas, self.blend_cfg)

        obs = self.scenario.obstacles
        h = h_values(x, obs)
        decay = psi(x, u_applied, obs, self._barrier, self.dyn_cfg)

        self.robot = step(x, u_applied, self.dyn_cfg)

        adapt = update(
            self.theta_hat, x, uH_pred, uH_meas,
            self.scenario.goal, obs, self.dyn_cfg, self.adapt_cfg,
        )
        self.theta_hat = adapt.theta_after
        self.tick_index += 1

        return TickRecord(
            t=t,
            ts=self.nmpc_cfg.ts,
            state=x,
            uH_meas=uH_meas,
            uH_pred=uH_pred,
            uR=uR_now,
            u_applied=u_applied,
            lambda_effective=lam_eff,
            theta_hat=adapt.theta_before,
            h_min=float(h.min()) if h.size else np.inf,
            psi_min=float(decay.min()) if decay.size else np.inf,
            delta0=float(sol.slacks[0]),
            cost=horizon_cost(sol, self._ref, self.nmpc_cfg),
            solver_iters=sol.sqp_iterations,
            solver_violation=sol.max_constraint_violation,
            solver_time=sol.solve_time,
            fallback_used=fallback,
            prediction_cost=prediction_cost(uH_pred, uH_meas, self.adapt_cfg),
            adaptation=adapt,
            horizon_states=sol.states,
        )


def run_episode(
    scenario: Scenario,
    operator,
    nmpc_cfg: NmpcConfig | None = None,
    blend_cfg: BlendConfig | None = None,
    adapt_cfg: AdaptationConfig | None = None,
    duration_limit: float = 120.0,
    seed: int = 0,
    theta0: IntentParams | None = None,
    delay_one_tick: bool = False,
    log_path: str | Path | None = None,
) -> EpisodeResult:
    """Run one closed-loop episode until the goal is reached (position within
    0.2 m, yaw within 0.3 rad) or the duration limit expires.

    ``operator`` is reset with (scenario, seed) before the first tick, so the
    outcome is deterministic for a fixed (scenario, configs, seed) triple.
    Solver breakdowns never raise mid-episode; the previous plan is shifted
    and served, and the tick is flagged in the trace.
    """
    loop = ControlLoop(
        scenario, nmpc_cfg, blend_cfg, adapt_cfg,
        theta0=theta0, delay_one_tick=delay_one_tick,
    )
    operator.reset(scenario, seed)
    n_ticks = int(round(duration_limit / loop.nmpc_cfg.ts))
    trace = []
    success = False
    time_to_goal = np.inf
    for _ in range(n_ticks):
        uH = operator.command(loop.robot, loop.t)
        trace.append(loop.tick(uH))
        if loop.goal_reached():
            success = True
            time_to_goal = loop.t
            break

    if not trace:
        result = empty_result()
    else:
        result = compute_metrics(
            trace, scenario.obstacles,
            final_state=loop.robot, success=success, time_to_goal=time_to_goal,
        )
    if log_path is not None:
        write_episode_log(log_path, result)
    return result


def write_episode_log(path: str | Path, result: EpisodeResult) -> None:
    """Write the JSON-lines episode log: one record per tick, followed by the
    adaptation record stream (tagged with kind="adaptation")."""
    lines = [json.dumps(rec.to_json_dict()) for rec in result.trace]
    lines += [
        json.dumps(_adaptation_json(rec.t, rec.adaptation))
        for rec in result.trace
        if rec.adaptation is not None
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
