"""Direct transcription of the receding-horizon problem.

Decision vector (grouped ordering, length 8N + 3)::

    z = [x_0 .. x_N | uR_0 .. uR_{N-1} | uH_0 .. uH_{N-1} | d_0 .. d_{N-1}]

Equalities (5N + 3): the initial-state pin, N dynamics defects, and N
stationarity conditions of the modeled human objective.  Inequalities:
N * n_obs barrier decrease rows (slackened through d_k), the 4N input box
rows on the robot channel, and, when obstacles are present, N lower bounds
on the barrier slacks.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .. import kernels
from ..dynamics import RobotState
from ..intent import IntentParams
from .config import NmpcConfig, ReferenceTrajectory, build_reference

_LOCK_EPS = 0.0  # a bound of exactly zero freezes that input component

# Keep-out penetration allowance, divided by slack_weight: each barrier
# slack is bounded below by d_k >= -cbf_gamma * KEEPOUT_ALLOWANCE / w.
# The decrease chain h_{k+1} >= (1 - gamma) h_k + d_k then has its fixed
# point at -KEEPOUT_ALLOWANCE / w, which caps how deep a row-feasible plan
# can settle into the keep-out (5 mm at the default weight).  Scaling with
# the slack price keeps the bound meaningful across a weight sweep: a
# deliberately cheap weight concedes a wide corridor, a strict one holds
# the boundary to a fraction of a millimeter.
KEEPOUT_ALLOWANCE = 5.0


@dataclasses.dataclass(frozen=True)
class NlpDescription:
    """Structural sizes of the transcribed problem (no solving involved)."""

    horizon: int
    n_obstacles: int
    n_variables: int
    n_states: int
    n_robot_inputs: int
    n_human_inputs: int
    n_slacks: int
    n_equalities: int
    n_eq_pin: int
    n_eq_dynamics: int
    n_eq_stationarity: int
    n_cbf_inequalities: int
    n_box_inequalities: int
    eq_jacobian_nnz: int
    ineq_jacobian_nnz: int


def transcribe(
    x0: RobotState,
    theta_hat: IntentParams,
    scenario,
    cfg: NmpcConfig,
) -> NlpDescription:
    n = cfg.horizon
    n_obs = len(scenario.obstacles)
    return NlpDescription(
        horizon=n,
        n_obstacles=n_obs,
        n_variables=8 * n + 3,
        n_states=3 * (n + 1),
        n_robot_inputs=2 * n,
        n_human_inputs=2 * n,
        n_slacks=n,
        n_equalities=5 * n + 3,
        n_eq_pin=3,
        n_eq_dynamics=3 * n,
        n_eq_stationarity=2 * n,
        n_cbf_inequalities=n * n_obs,
        n_box_inequalities=4 * n,
        # dynamics rows carry A (9) + BR (6) + BH (6) + identity coupling (3),
        # stationarity rows Px (6) + Pu (4), the pin an identity (3)
        eq_jacobian_nnz=3 + n * (9 + 6 + 6 + 3) + n * (6 + 4),
        # one barrier row touches x_k (2), x_{k+1} (2) and its slack (1)
        ineq_jacobian_nnz=5 * n * n_obs + 4 * n,
    )


class Transcription:
    """Everything one SQP solve needs: kernels bound to the instance, index
    maps, and the inequality-row bookkeeping the QP layer works with.

    Inequalities are ordered ``[cbf rows (N * n_obs), box rows (4N), slack
    floor rows (N, obstacles only)]`` with box rows grouped as upper-v,
    lower-v, upper-omega, lower-omega.  Rows for a locked component (bound
    exactly zero) are dropped; the component is instead frozen inside the
    KKT system.
    """

    def __init__(
        self,
        x0: RobotState,
        theta_hat: IntentParams,
        scenario,
        cfg: NmpcConfig,
        ref: ReferenceTrajectory | None = None,
    ):
        self.cfg = cfg
        self.scenario = scenario
        self.x0 = np.asarray(x0.as_array(), float)
        self.theta = theta_hat.as_array()
        self.n = cfg.horizon
        self.n_obs = len(scenario.obstacles)
        if ref is None:
            ref = build_reference(scenario.goal, cfg.horizon, start=x0, mode=cfg.reference_mode)
        if len(ref) != cfg.horizon + 1:
            raise ValueError(
                f"reference has {len(ref)} knots, horizon needs {cfg.horizon + 1}"
            )
        self.ref = ref
        self.v_max, self.omega_max = (float(b) for b in cfg.input_bounds)
        self.locked = (self.v_max <= _LOCK_EPS, self.omega_max <= _LOCK_EPS)

        klass = kernels.get_kernels_class()
        self.kern = klass(
            cfg.horizon,
            cfg.ts,
            cfg.blend_lambda,
            cfg.cbf_gamma,
            scenario.obstacles.d_th,
            self.theta,
            scenario.goal.as_array(),
            scenario.obstacles.as_array(),
            ref.poses,
            cfg.state_weights,
            cfg.terminal_weights,
            cfg.robot_input_weights,
            cfg.human_input_weights,
            cfg.slack_weight,
            locked=self.locked,
        )
        k = self.kern
        self.n_prim = k.n_prim
        self.n_kkt = k.n_kkt
        self.m_eq = k.m_eq
        self.prim2kkt = k.prim2kkt
        self.eq2kkt = k.eq2kkt
        self.off_ur, self.off_uh, self.off_dl = k.off_ur, k.off_uh, k.off_dl
        self.m_cbf = self.n * self.n_obs
        self._box_active = [not self.locked[0], not self.locked[1]]
        self.m_box = 2 * self.n * sum(self._box_active)
        # Without a floor on the slacks the subproblem can legalize any
        # keep-out crossing by paying w * d^2 (whose marginal price at
        # d = 0 is zero), and plain cost descent then settles wherever
        # tracking outweighs the quadratic price.  Bounding the slacks
        # makes the decrease chain binding inside the allowance, so the
        # subproblem itself produces steps that steer along an obstacle
        # boundary instead of through it.
        self.slack_floor = cfg.cbf_gamma * KEEPOUT_ALLOWANCE / cfg.slack_weight
        self.m_dlo = self.n if self.m_cbf else 0
        self.m_in = self.m_cbf + self.m_box + self.m_dlo
        self._lock_prim = np.concatenate(
            [
                np.arange(self.n) * 2 + self.off_ur + comp
                for comp in range(2)
                if self.locked[comp]
            ]
        ).astype(np.int64) if any(self.locked) else np.empty(0, dtype=np.int64)

    # ----- z <-> parts ------------------------------------------------------

    def split(self, z: np.ndarray):
        n = self.n
        xs = z[: 3 * (n + 1)].reshape(n + 1, 3)
        ur = z[self.off_ur : self.off_uh].reshape(n, 2)
        uh = z[self.off_uh : self.off_dl].reshape(n, 2)
        dl = z[self.off_dl :]
        return xs, ur, uh, dl

    def pack(self, xs, ur, uh, dl) -> np.ndarray:
        return np.concatenate([
            np.asarray(xs, float).ravel(),
            np.asarray(ur, float).ravel(),
            np.asarray(uh, float).ravel(),
            np.asarray(dl, float).ravel(),
        ])

    # ----- evaluation -------------------------------------------------------

    def residuals(self, z: np.ndarray):
        xs, ur, uh, dl = self.split(z)
        cost, c_dyn, c_stat, c_cbf, min_d2 = self.kern.residuals(xs, ur, uh, dl)
        c_pin = xs[0] - self.x0
        return {
            "cost": cost,
            "c_pin": c_pin,
            "c_dyn": c_dyn,
            "c_stat": c_stat,
            "c_cbf": c_cbf,
            "min_d2": min_d2,
            "box_hi_v": self.v_max - ur[:, 0],
            "box_lo_v": ur[:, 0] + self.v_max,
            "box_hi_w": self.omega_max - ur[:, 1],
            "box_lo_w": ur[:, 1] + self.omega_max,
            "slack_lo": dl + self.slack_floor,
        }

    def eq_vector(self, res) -> np.ndarray:
        """Equality constraint values c(z); the QP solves E dz = -c."""
        return np.concatenate([
            res["c_pin"],
            res["c_dyn"].ravel(),
            res["c_stat"].ravel(),
        ])

    def ineq_vector(self, res) -> np.ndarray:
        """Inequality constraint values c(z) with the convention c >= 0."""
        parts = [res["c_cbf"].ravel()]
        if self._box_active[0]:
            parts += [res["box_hi_v"], res["box_lo_v"]]
        if self._box_active[1]:
            parts += [res["box_hi_w"], res["box_lo_w"]]
        if self.m_dlo:
            parts.append(res["slack_lo"])
        return np.concatenate(parts) if parts else np.empty(0)

    def violation(self, res) -> float:
        v = float(np.abs(self.eq_vector(res)).max())
        ineq = self.ineq_vector(res)
        if ineq.size:
            v = max(v, float(max(0.0, -ineq.min())))
        return v

    def merit_infeasibility(self, res) -> float:
        """l1 constraint infeasibility used in the line-search merit."""
        m = float(np.abs(self.eq_vector(res)).sum())
        ineq = self.ineq_vector(res)
        if ineq.size:
            m += float(np.minimum(ineq, 0.0).sum()) * -1.0
        return m

    def linearize(self, z: np.ndarray):
        xs, ur, uh, dl = self.split(z)
        return self.kern.jacobians(xs, ur, uh, dl)

    # ----- QP operator interface ---------------------------------------------

    def eq_matvec(self, jac, dz: np.ndarray) -> np.ndarray:
        return self.kern.eq_matvec(jac, dz)

    def eq_rmatvec(self, jac, y: np.ndarray) -> np.ndarray:
        return self.kern.eq_rmatvec(jac, y)

    def ineq_matvec(self, jac, dz: np.ndarray) -> np.ndarray:
        out = self.kern.ineq_matvec(jac, dz)
        if self.m_dlo:
            out = np.concatenate([out, dz[self.off_dl :]])
        return out

    def ineq_rmatvec(self, jac, w: np.ndarray) -> np.ndarray:
        out = self.kern.ineq_rmatvec(jac, w[: self.m_cbf + self.m_box])
        if self.m_dlo:
            out[self.off_dl :] += w[self.m_cbf + self.m_box :]
        return out

    def sigma_split(self, sigma: np.ndarray):
        """Split a length-m_in vector of barrier weights into the pieces the
        band assembler takes: (N, n_obs) for the cbf rows, per-component
        sums (N, 2) for the box rows, and the slack-floor tail (N,) that
        lands directly on the slack diagonal (None when absent)."""
        sigma_cbf = None
        if self.m_cbf:
            sigma_cbf = sigma[: self.m_cbf].reshape(self.n, self.n_obs)
        sigma_box = np.zeros((self.n, 2))
        pos = self.m_cbf
        n = self.n
        if self._box_active[0]:
            sigma_box[:, 0] = sigma[pos : pos + n] + sigma[pos + n : pos + 2 * n]
            pos += 2 * n
        if self._box_active[1]:
            sigma_box[:, 1] = sigma[pos : pos + n] + sigma[pos + n : pos + 2 * n]
        sigma_dlo = sigma[self.m_cbf + self.m_box :] if self.m_dlo else None
        return sigma_cbf, sigma_box, sigma_dlo

    def lock_targets(self, z: np.ndarray) -> tuple:
        """Primal indices frozen by zero-width bounds and the dz values that
        move them onto the bound in one step."""
        if not len(self._lock_prim):
            return self._lock_prim, np.empty(0)
        return self._lock_prim, -z[self._lock_prim]
