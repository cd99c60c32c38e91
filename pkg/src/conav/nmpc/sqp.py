"""Gauss-Newton SQP driver for the receding-horizon problem."""

from __future__ import annotations

import time

import numpy as np

from ..dynamics import DynamicsConfig, RobotState, VelocityCommand
from ..errors import ConvergenceError, DomainError, SolverFailure
from ..intent import IntentParams, solve_rational_action
from .config import HorizonSolution, NmpcConfig, ReferenceTrajectory, warm_shift
from .qp import solve_qp
from .transcription import KEEPOUT_ALLOWANCE, Transcription

_VIOLATION_TOL = 1.0e-4
_STEP_TOL = 1.0e-6
_DOMAIN_GUARD = 1.0e-3   # m; reject steps this close to an obstacle center
_ARMIJO = 1.0e-4
_MIN_ALPHA = 1.0e-10
_TRUST_RADIUS = 0.25     # largest per-component step after a full-step reject
_DAMP_MIN = 1.0          # smallest nonzero proximal weight (damped Gauss-Newton)
_STALL_RTOL = 1.0e-5     # relative merit progress below which an iteration
                         # counts as stalled (once feasible, two in a row stop
                         # the loop; the cost landscape near the optimum is a
                         # long flat valley and polishing it buys nothing)
_KEEPOUT_RIDGE = 0.5     # merit weight on the unslacked barrier-row deficit,
                         # as a multiple of slack_weight (see _keepout_deficit)


def _cold_start(tr: Transcription) -> np.ndarray:
    """Initial guess when no warm solution exists: hold the measured state,
    zero robot inputs, and (when solvable) the stationary human action."""
    n = tr.n
    xs = np.tile(tr.x0, (n + 1, 1))
    ur = np.zeros((n, 2))
    uh = np.zeros((n, 2))
    try:
        ua = solve_rational_action(
            RobotState.from_array(tr.x0),
            IntentParams.from_array(tr.theta),
            tr.scenario.goal,
            tr.scenario.obstacles,
            DynamicsConfig(ts=tr.cfg.ts),
        )
        uh[:] = ua.as_array()
    except (DomainError, ConvergenceError):
        pass
    dl = np.zeros(n)
    return tr.pack(xs, ur, uh, dl)


def _warm_start(tr: Transcription, warm: HorizonSolution) -> np.ndarray:
    if warm.horizon != tr.n:
        raise ValueError(
            f"warm start has horizon {warm.horizon}, expected {tr.n}"
        )
    xs = np.array(warm.states, float)
    xs[0] = tr.x0
    return tr.pack(xs, warm.robot_inputs, warm.human_inputs, warm.slacks)


def _brake_fraction(pos: np.ndarray, move: np.ndarray, obs_xy, targets) -> float:
    """Largest fraction of a displacement that keeps every obstacle
    distance at or above its per-obstacle target radius.

    Solves the per-obstacle quadratic |pos + s*move - c|^2 = target^2 for
    the first crossing and returns the smallest such s in [0, 1]; 1 when
    the full displacement never crosses a target circle.
    """
    a = float(move @ move)
    if a <= 0.0:
        return 1.0
    s = 1.0
    for c, target in zip(obs_xy, targets):
        r = pos - c
        end = r + move
        if end @ end >= target * target:
            continue
        b = 2.0 * float(r @ move)
        c0 = float(r @ r) - target * target
        disc = max(b * b - 4.0 * a * c0, 0.0)
        s = min(s, max((-b - np.sqrt(disc)) / (2.0 * a), 0.0))
    return s


def _rollout_projection(tr: Transcription, z: np.ndarray, obs_xy, allow: float):
    """Project an SQP iterate onto an executable plan by forward simulation.

    Robot inputs are clamped to their box, each step's human input is
    re-solved as the rational action at the simulated state (zeroing the
    stationarity rows by construction), and states follow the Euler model
    exactly, so the result is a physically executable plan whose only
    residual infeasibility is the rational-action solver tolerance.

    When a step would outrun the barrier decrease law (or deepen a dip
    past the floor), the robot's velocity share is braked so the step
    stops where the law allows.  Only the robot's authority (lambda * uR)
    is available for braking: the human share of the blend is not ours to
    edit, so at low lambda the human can genuinely push past the floor
    and the rolled path records that honestly.  Slacks are then lowered
    toward their bound until barrier rows clear; any deficit the bound
    refuses to absorb stays visible as constraint violation.  Returns
    ``(z, res, viol)``, or None when a stationarity solve breaks down or
    the path grazes an obstacle center.
    """
    xs, _, uh, dl = tr.split(z)
    ur = np.clip(tr.split(z)[1], [-tr.v_max, -tr.omega_max], [tr.v_max, tr.omega_max])
    dcfg = DynamicsConfig(ts=tr.cfg.ts)
    theta = IntentParams.from_array(tr.theta)
    lam = tr.cfg.blend_lambda
    ts = tr.cfg.ts
    d_th = tr.scenario.obstacles.d_th if tr.m_cbf else 0.0
    xs_new = np.empty_like(xs)
    uh_new = np.empty_like(uh)
    ur_new = ur.copy()
    xs_new[0] = tr.x0
    for k in range(tr.n):
        try:
            act = solve_rational_action(
                RobotState.from_array(xs_new[k]),
                theta,
                tr.scenario.goal,
                tr.scenario.obstacles,
                dcfg,
                u0=VelocityCommand(uh[k, 0], uh[k, 1]),
            )
        except (ConvergenceError, DomainError):
            return None
        uh_new[k] = (act.v, act.omega)
        vb = lam * ur_new[k, 0] + (1.0 - lam) * act.v
        wb = lam * ur_new[k, 1] + (1.0 - lam) * act.omega
        if tr.m_cbf and vb != 0.0 and lam > 0.0:
            pos = xs_new[k, :2]
            move = ts * vb * np.array(
                [np.cos(xs_new[k, 2]), np.sin(xs_new[k, 2])]
            )
            h_now = np.sqrt(((obs_xy - pos[None]) ** 2).sum(axis=1)) - d_th
            # per-step target: obey the decrease law at the bounded slack
            # (approach no faster than the barrier may decay), and never
            # deepen a dip already past the floor
            targets = d_th + np.maximum(
                (1.0 - tr.cfg.cbf_gamma) * h_now - tr.slack_floor,
                np.minimum(h_now, -allow),
            )
            s = _brake_fraction(pos, move, obs_xy, targets)
            if s < 1.0:
                ur_new[k, 0] = np.clip(
                    (s * vb - (1.0 - lam) * act.v) / lam, -tr.v_max, tr.v_max
                )
                vb = lam * ur_new[k, 0] + (1.0 - lam) * act.v
        xs_new[k + 1, 0] = xs_new[k, 0] + ts * vb * np.cos(xs_new[k, 2])
        xs_new[k + 1, 1] = xs_new[k, 1] + ts * vb * np.sin(xs_new[k, 2])
        xs_new[k + 1, 2] = xs_new[k, 2] + ts * wb
    z_new = tr.pack(xs_new, ur_new, uh_new, dl)
    res = tr.residuals(z_new)
    if tr.m_cbf:
        if res["min_d2"] < _DOMAIN_GUARD ** 2:
            return None
        slack_drop = np.minimum(res["c_cbf"].min(axis=1), 0.0)
        if slack_drop.any():
            dl_new = np.maximum(dl + slack_drop, -tr.slack_floor)
            z_new = tr.pack(xs_new, ur_new, uh_new, dl_new)
            res = tr.residuals(z_new)
    return z_new, res, tr.violation(res)


def _plan_hmin(tr: Transcription, obs_xy, z: np.ndarray) -> np.ndarray:
    """Per-obstacle minimum barrier value over the knot positions of an
    iterate.  Tracking the minimum per obstacle (rather than one global
    minimum) keeps an old dip at one obstacle from licensing a fresh dip
    at another."""
    if obs_xy is None:
        return np.empty(0)
    xs = z[: 3 * (tr.n + 1)].reshape(tr.n + 1, 3)
    d2 = (xs[:, None, 0] - obs_xy[None, :, 0]) ** 2
    d2 += (xs[:, None, 1] - obs_xy[None, :, 1]) ** 2
    return np.sqrt(d2.min(axis=0)) - tr.scenario.obstacles.d_th


def _keepout_deficit(tr: Transcription, res, dl: np.ndarray) -> float:
    """l1 mass of unslacked barrier-decay violation along an iterate.

    The slacks make every barrier row satisfiable, so constraint violation
    alone cannot see a plan that buys its way through the keep-out.  The
    quadratic slack penalty has zero marginal price at delta = 0, which
    means plain cost descent drifts plans into the keep-out as soon as the
    tracking gain outweighs w*delta^2; pricing the unslacked rows linearly
    in the merit restores the missing ridge at the boundary.  The weight
    scales with slack_weight so a deliberately cheap w still concedes (the
    documented low-w behavior) while the default and strict settings hold
    the line.  Plans that never touch the keep-out are unaffected.
    """
    if not tr.m_cbf:
        return 0.0
    rows = res["c_cbf"] + dl[:, None]
    return float(-np.minimum(rows, 0.0).sum())


def _better(viol_a: float, score_a: float, viol_b: float, score_b: float) -> bool:
    """Lexicographic iterate comparison: feasibility first, then merit score
    (cost plus the keep-out ridge)."""
    feas_a = viol_a <= _VIOLATION_TOL
    feas_b = viol_b <= _VIOLATION_TOL
    if feas_a and feas_b:
        return score_a < score_b
    if feas_a != feas_b:
        return feas_a
    return viol_a < viol_b


def solve(
    x0: RobotState,
    theta_hat: IntentParams,
    scenario,
    cfg: NmpcConfig | None = None,
    warm: HorizonSolution | None = None,
    ref: ReferenceTrajectory | None = None,
) -> HorizonSolution:
    """One receding-horizon solve.

    Raises SolverFailure when the QP subproblem breaks down; any other
    outcome returns the best iterate found, with ``converged`` reporting
    whether both the violation and the final step-norm tests passed.
    """
    t_start = time.perf_counter()
    cfg = cfg or NmpcConfig()
    tr = Transcription(x0, theta_hat, scenario, cfg, ref=ref)
    z = _warm_start(tr, warm) if warm is not None else _cold_start(tr)

    res = tr.residuals(z)
    viol = tr.violation(res)
    ridge = _KEEPOUT_RIDGE * cfg.slack_weight
    obs_xy = (
        np.asarray(scenario.obstacles.as_array(), float).reshape(-1, 2)
        if tr.m_cbf
        else None
    )
    # keep-out floor: the slack bound inside the subproblem (see
    # Transcription) already caps how deep the linearized rows let a plan
    # settle, but a trial step is taken in the nonlinear problem, where a
    # large step can land knots deeper than the linear model believed.
    # The floor below is the nonlinear guard for the same allowance: a
    # trial may approach the keep-out, and may dip into it by at most
    # allow, but may never deepen an existing dip.
    allow = KEEPOUT_ALLOWANCE / cfg.slack_weight
    deficit = _keepout_deficit(tr, res, tr.split(z)[3])
    score = res["cost"] + ridge * deficit
    best_z, best_viol, best_score = z.copy(), viol, score
    rho = 10.0
    converged = False
    qp_count = 0
    step_norm = np.inf
    damp = 0.0
    stalled = 0

    for _ in range(cfg.max_sqp_iters):
        jac = tr.linearize(z)
        qp = solve_qp(tr, z, jac, res, cfg.qp_tolerance, damp=damp)
        qp_count += 1
        step_norm = float(np.abs(qp.dz).max(initial=0.0))
        if viol <= _VIOLATION_TOL and step_norm <= _STEP_TOL:
            converged = True
            break

        mult_norm = float(np.abs(qp.y_eq).max(initial=0.0))
        if qp.lam.size:
            mult_norm = max(mult_norm, float(np.abs(qp.lam).max(initial=0.0)))
        # the penalty must dominate the current multipliers, but it may also
        # shrink (at most geometrically) once they settle; a penalty ratcheted
        # up by the first cold-start duals never lets the line search take a
        # useful step again
        rho_needed = 2.0 * mult_norm + 1.0
        rho = max(10.0, rho_needed if rho_needed > rho else max(rho_needed, 0.5 * rho))

        infeas0 = tr.merit_infeasibility(res)
        merit0 = res["cost"] + rho * infeas0 + ridge * deficit
        directional = float(jac["grad"] @ qp.dz) - rho * infeas0 - ridge * deficit

        def merit_ok(z_t, res_t, alpha: float) -> bool:
            merit_t = (res_t["cost"] + rho * tr.merit_infeasibility(res_t)
                       + ridge * _keepout_deficit(tr, res_t, tr.split(z_t)[3]))
            return merit_t <= merit0 + _ARMIJO * alpha * min(directional, 0.0)

        def domain_ok(res_t) -> bool:
            return not tr.m_cbf or res_t["min_d2"] >= _DOMAIN_GUARD ** 2

        h_floor = np.minimum(_plan_hmin(tr, obs_xy, z), -allow)

        def floor_ok(z_t) -> bool:
            return bool(np.all(_plan_hmin(tr, obs_xy, z_t) >= h_floor - 1.0e-9))

        alpha = 1.0
        accepted = False
        while alpha >= _MIN_ALPHA:
            z_trial = z + alpha * qp.dz
            res_trial = tr.residuals(z_trial)
            if domain_ok(res_trial) and floor_ok(z_trial) and merit_ok(z_trial, res_trial, alpha):
                accepted = True
                break
            if alpha == 1.0:
                if qp.correction is not None and domain_ok(res_trial):
                    # second-order correction: the full step often trades a
                    # large cost drop for curvature-induced equality
                    # violation, which the l1 merit then rejects; one extra
                    # solve with the cached factorization removes that
                    # violation and lets the full step through instead of
                    # crawling at small alpha
                    z_soc = z_trial + qp.correction(tr.eq_vector(res_trial))
                    res_soc = tr.residuals(z_soc)
                    if domain_ok(res_soc) and floor_ok(z_soc) and merit_ok(z_soc, res_soc, alpha):
                        z_trial, res_trial = z_soc, res_soc
                        accepted = True
                        break
                # once the full step is rejected the quadratic model is not
                # trusted at this radius; restart the search at a step whose
                # largest component is _TRUST_RADIUS instead of halving from
                # 1, so feasibility still contracts at a useful rate
                alpha = min(0.5, _TRUST_RADIUS / max(step_norm, _TRUST_RADIUS))
                continue
            alpha *= 0.5
        if not accepted:
            # damp hard and retry from the same point rather than giving
            # up; a large proximal term turns the next subproblem into a
            # short, trustworthy step
            damp = max(damp * 8.0, _DAMP_MIN)
            continue
        if alpha >= 1.0:
            damp = 0.0 if damp < _DAMP_MIN else damp / 4.0
        else:
            # a backtracked step means the model overshot at this radius
            damp = max(damp * 4.0, _DAMP_MIN)

        z, res = z_trial, res_trial
        # the QP keeps dz on the pin row at LU roundoff level; snap it back
        # so the measured state is carried exactly
        z[:3] = tr.x0
        viol = tr.violation(res)
        deficit = _keepout_deficit(tr, res, tr.split(z)[3])
        score = res["cost"] + ridge * deficit
        if _better(viol, score, best_viol, best_score):
            best_z, best_viol, best_score = z.copy(), viol, score

        merit_new = res["cost"] + rho * tr.merit_infeasibility(res) + ridge * deficit
        if viol <= _VIOLATION_TOL and merit0 - merit_new <= _STALL_RTOL * (1.0 + abs(merit0)):
            stalled += 1
            if stalled >= 2:
                break
        else:
            stalled = 0

    if converged and _better(viol, score, best_viol, best_score):
        best_z, best_viol, best_score = z.copy(), viol, score

    if not converged and qp_count and viol > _VIOLATION_TOL:
        # feasibility restoration: when the iteration cap lands on a
        # low-cost iterate that is not quite feasible, project it onto the
        # constraint manifold by forward simulation so it can legitimately
        # beat a feasible but far worse start; without this, a large
        # reorientation maneuver can lose to "hold position" every tick
        # and deadlock the receding-horizon loop.  The projection lowers
        # slacks to whatever its rolled path needs, so its candidate is
        # scored with the same keep-out ridge as every other iterate; a
        # restoration that buys feasibility by cutting through the keep-out
        # only wins when the slack weight is deliberately cheap
        projected = _rollout_projection(tr, z, obs_xy, allow)
        if projected is not None:
            z_p, res_p, viol_p = projected
            score_p = res_p["cost"] + ridge * _keepout_deficit(
                tr, res_p, tr.split(z_p)[3]
            )
            if _better(viol_p, score_p, best_viol, best_score):
                best_z, best_viol, best_score = z_p, viol_p, score_p

    best_z[:3] = tr.x0
    xs, ur, uh, dl = tr.split(best_z)
    return HorizonSolution(
        states=xs,
        robot_inputs=ur,
        human_inputs=uh,
        slacks=dl,
        sqp_iterations=qp_count,
        max_constraint_violation=best_viol,
        solve_time=time.perf_counter() - t_start,
        converged=converged,
    )


class NmpcSolver:
    """Stateful wrapper that owns the warm start between ticks.

    ``solve_tick`` returns ``(solution, fallback_used)``.  When the solver
    breaks down mid-episode the previous solution is shifted one step and
    served instead, so the vehicle keeps tracking the last good plan.
    """

    def __init__(self, cfg: NmpcConfig | None = None):
        self.cfg = cfg or NmpcConfig()
        self._prev: HorizonSolution | None = None

    @property
    def last_solution(self) -> HorizonSolution | None:
        return self._prev

    def reset(self) -> None:
        self._prev = None

    def solve_tick(
        self,
        x0: RobotState,
        theta_hat: IntentParams,
        scenario,
    ) -> tuple:
        warm = warm_shift(self._prev, measured=x0) if self._prev is not None else None
        try:
            sol = solve(x0, theta_hat, scenario, self.cfg, warm=warm)
        except SolverFailure:
            if warm is None:
                raise
            self._prev = warm
            return warm, True
        self._prev = sol
        return sol, False

    def robot_command(self, solution: HorizonSolution) -> VelocityCommand:
        return VelocityCommand.from_array(solution.first_robot_input())
