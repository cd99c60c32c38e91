"""Boltzmann-rational human intent model.

The operator is modeled as noisily rational with respect to a state-action
value function

    Q(x, uH, theta) = ||C f(x,uH) - g||^2_M(theta1) + ||uH||^2_M(theta2)
                      - theta3 * sum_l ln(||C_xy f(x,uH) - o_l||^2 / d_th^2)

where f(x, uH) = a(x) + B(x) uH is the one-step prediction under the human's
own action. A rational action is a stationary point of Q in uH; the residual
phi is the exact gradient of Q and its analytic Jacobians in uH and theta feed
both the trajectory optimizer and the online parameter adaptation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsConfig, RobotState, VelocityCommand, wrap_angle
from .errors import ConvergenceError, DegenerateDistribution, DomainError

EPSILON_THETA = 1e-3

# Squared-distance floor below which a predicted position counts as sitting on
# an obstacle center (log singularity).
_DOMAIN_EPS2 = 1e-24

DEFAULT_INPUT_BOX = ((-0.4, 0.4), (-0.8, 0.8))  # (v range [m/s], omega range [rad/s])


@dataclass(frozen=True)
class IntentParams:
    """Five-component parameterization of the human value function.

    ``tied=True`` selects the four-parameter mode where the x and y goal
    weights are a single estimate (enforced at construction and preserved by
    the adaptation projection).
    """

    theta1_x: float
    theta1_y: float
    theta1_yaw: float
    theta2: float
    theta3: float
    tied: bool = False

    def __post_init__(self):
        arr = self.as_array()
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"intent parameters must be finite, got {arr}")
        if np.any(arr < EPSILON_THETA):
            raise ValueError(
                f"every intent parameter must be >= {EPSILON_THETA}, got {arr}"
            )
        if self.tied and self.theta1_x != self.theta1_y:
            raise ValueError(
                "tied mode requires theta1_x == theta1_y, "
                f"got {self.theta1_x} != {self.theta1_y}"
            )

    @staticmethod
    def make_tied(theta1_xy: float, theta1_yaw: float, theta2: float, theta3: float) -> "IntentParams":
        return IntentParams(theta1_xy, theta1_xy, theta1_yaw, theta2, theta3, tied=True)

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.theta1_x, self.theta1_y, self.theta1_yaw, self.theta2, self.theta3],
            dtype=float,
        )

    @staticmethod
    def from_array(arr, tied: bool = False) -> "IntentParams":
        return IntentParams(*(float(a) for a in arr), tied=tied)


@dataclass(frozen=True)
class GoalPose:
    gx: float
    gy: float
    gyaw: float

    def __post_init__(self):
        if not all(map(math.isfinite, (self.gx, self.gy, self.gyaw))):
            raise ValueError("goal pose must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.gx, self.gy, self.gyaw], dtype=float)


@dataclass(frozen=True)
class ObstacleSet:
    """Cylindrical obstacles given by center points, plus the shared safety
    distance d_th used to normalize the log barrier."""

    centers: tuple
    d_th: float = 0.5

    def __post_init__(self):
        if not self.d_th > 0.0:
            raise ValueError(f"d_th must be positive, got {self.d_th}")
        object.__setattr__(
            self, "centers", tuple((float(cx), float(cy)) for cx, cy in self.centers)
        )

    def __len__(self) -> int:
        return len(self.centers)

    def as_array(self) -> np.ndarray:
        if not self.centers:
            return np.zeros((0, 2))
        return np.array(self.centers, dtype=float)


@dataclass(frozen=True)
class RationalityCoefficient:
    beta: float = 50.0

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta >= 0.0):
            raise ValueError(f"beta must be finite and >= 0, got {self.beta}")


def _prediction(x: RobotState, uH: VelocityCommand, ts: float):
    """One-step prediction pieces shared by Q, phi and the Jacobians."""
    c, s = math.cos(x.yaw), math.sin(x.yaw)
    px = x.x + ts * uH.v * c
    py = x.y + ts * uH.v * s
    yaw = x.yaw + ts * uH.omega
    return c, s, px, py, yaw


def _obstacle_terms(px: float, py: float, obs: ObstacleSet):
    """Offsets r_l and squared distances q_l of the predicted position."""
    if not obs.centers:
        return np.zeros((0, 2)), np.zeros(0)
    centers = obs.as_array()
    r = np.array([px, py]) - centers
    q = np.einsum("ij,ij->i", r, r)
    if np.any(q <= _DOMAIN_EPS2):
        raise DomainError("predicted position coincides with an obstacle center")
    return r, q


def q_value(
    x: RobotState,
    uH: VelocityCommand,
    theta: IntentParams,
    goal: GoalPose,
    obs: ObstacleSet,
    cfg: DynamicsConfig,
) -> float:
    """Human state-action value at (x, uH): goal tracking plus effort plus a
    log barrier over the obstacle set."""
    c, s, px, py, yaw = _prediction(x, uH, cfg.ts)
    e1 = px - goal.gx
    e2 = py - goal.gy
    e3 = wrap_angle(yaw - goal.gyaw)
    val = (
        theta.theta1_x * e1 * e1
        + theta.theta1_y * e2 * e2
        + theta.theta1_yaw * e3 * e3
        + theta.theta2 * (uH.v * uH.v + uH.omega * uH.omega)
    )
    _, q = _obstacle_terms(px, py, obs)
    if len(q):
        val -= theta.theta3 * float(np.sum(np.log(q / obs.d_th**2)))
    return float(val)


def phi_residual(
    x: RobotState,
    uH: VelocityCommand,
    theta: IntentParams,
    goal: GoalPose,
    obs: ObstacleSet,
    cfg: DynamicsConfig,
) -> np.ndarray:
    """Stationarity residual: the exact gradient of ``q_value`` in uH."""
    ts = cfg.ts
    c, s, px, py, yaw = _prediction(x, uH, ts)
    e1 = px - goal.gx
    e2 = py - goal.gy
    e3 = wrap_angle(yaw - goal.gyaw)
    phi_v = 2.0 * ts * (c * theta.theta1_x * e1 + s * theta.theta1_y * e2) + 2.0 * theta.theta2 * uH.v
    phi_w = 2.0 * ts * theta.theta1_yaw * e3 + 2.0 * theta.theta2 * uH.omega
    r, q = _obstacle_terms(px, py, obs)
    if len(q):
        u_r = c * r[:, 0] + s * r[:, 1]  # heading-projected offsets
        phi_v -= 2.0 * theta.theta3 * ts * float(np.sum(u_r / q))
    return np.array([phi_v, phi_w])


def phi_jacobian_u(
    x: RobotState,
    uH: VelocityCommand,
    theta: IntentParams,
    goal: GoalPose,
    obs: ObstacleSet,
    cfg: DynamicsConfig,
) -> np.ndarray:
    """Analytic Jacobian of phi_residual with respect to uH (2x2)."""
    ts = cfg.ts
    c, s, px, py, _ = _prediction(x, uH, ts)
    j_vv = 2.0 * ts * ts * (c * c * theta.theta1_x + s * s * theta.theta1_y) + 2.0 * theta.theta2
    j_ww = 2.0 * ts * ts * theta.theta1_yaw + 2.0 * theta.theta2
    r, q = _obstacle_terms(px, py, obs)
    if len(q):
        u_r = c * r[:, 0] + s * r[:, 1]
        j_vv -= 2.0 * theta.theta3 * ts * ts * float(np.sum(1.0 / q - 2.0 * u_r * u_r / (q * q)))
    return np.array([[j_vv, 0.0], [0.0, j_ww]])


def phi_jacobian_theta(
    x: RobotState,
    uH: VelocityCommand,
    theta: IntentParams,
    goal: GoalPose,
    obs: ObstacleSet,
    cfg: DynamicsConfig,
) -> np.ndarray:
    """Analytic Jacobian of phi_residual with respect to the five intent
    parameters, columns ordered (theta1_x, theta1_y, theta1_yaw, theta2, theta3)."""
    ts = cfg.ts
    c, s, px, py, yaw = _prediction(x, uH, ts)
    e1 = px - goal.gx
    e2 = py - goal.gy
    e3 = wrap_angle(yaw - goal.gyaw)
    jac = np.zeros((2, 5))
    jac[0, 0] = 2.0 * ts * c * e1
    jac[0, 1] = 2.0 * ts * s * e2
    jac[1, 2] = 2.0 * ts * e3
    jac[0, 3] = 2.0 * uH.v
    jac[1, 3] = 2.0 * uH.omega
    r, q = _obstacle_terms(px, py, obs)
    if len(q):
        u_r = c * r[:, 0] + s * r[:, 1]
        jac[0, 4] = -2.0 * ts * float(np.sum(u_r / q))
    return jac


def phi_jacobian_x(
    x: RobotState,
    uH: VelocityCommand,
    theta: IntentParams,
    goal: GoalPose,
    obs: ObstacleSet,
    cfg: DynamicsConfig,
) -> np.ndarray:
    """Jacobian of phi_residual with respect to the state (2x3), used when the
    stationarity system is embedded as a trajectory constraint."""
    ts = cfg.ts
    c, s, px, py, yaw = _prediction(x, uH, ts)
    e1 = px - goal.gx
    e2 = py - goal.gy
    m1x, m1y, m1a = theta.theta1_x, theta.theta1_y, theta.theta1_yaw
    jac = np.zeros((2, 3))
    jac[0, 0] = 2.0 * ts * c * m1x
    jac[0, 1] = 2.0 * ts * s * m1y
    jac[0, 2] = 2.0 * ts * (
        -s * m1x * e1 + c * m1y * e2 + ts * uH.v * c * s * (m1y - m1x)
    )
    jac[1, 2] = 2.0 * ts * m1a
    r, q = _obstacle_terms(px, py, obs)
    if len(q):
        u_r = c * r[:, 0] + s * r[:, 1]
        u_p = -s * r[:, 0] + c * r[:, 1]
        th3 = theta.theta3
        jac[0, 0] -= 2.0 * th3 * ts * float(np.sum(c / q - 2.0 * u_r * r[:, 0] / (q * q)))
        jac[0, 1] -= 2.0 * th3 * ts * float(np.sum(s / q - 2.0 * u_r * r[:, 1] / (q * q)))
        jac[0, 2] -= 2.0 * th3 * ts * float(
            np.sum(u_p / q - 2.0 * ts * uH.v * u_r * u_p / (q * q))
        )
    return jac


def _in_domain(x: RobotState, uH: VelocityCommand, obs: ObstacleSet, ts: float) -> bool:
    if not obs.centers:
        return True
    _, _, px, py, _ = _prediction(x, uH, ts)
    r = np.array([px, py]) - obs.as_array()
    return bool(np.min(np.einsum("ij,ij->i", r, r)) > _DOMAIN_EPS2)


def solve_rational_action(
    x: RobotState,
    theta: IntentParams,
    goal: GoalPose,
    obs: ObstacleSet,
    cfg: DynamicsConfig,
    u0: VelocityCommand | None = None,
    tol: float = 1e-8,
    max_iters: int = 50,
) -> VelocityCommand:
    """Solve phi(x, uH, theta) = 0 by damped Newton iteration.

    Steps are halved whenever a trial iterate leaves the log-barrier domain or
    fails to decrease the residual norm.
    """
    if u0 is None:
        u0 = VelocityCommand(0.0, 0.0)
    u = u0
    if not _in_domain(x, u, obs, cfg.ts):
        u = VelocityCommand(0.0, 0.0)
        if not _in_domain(x, u, obs, cfg.ts):
            raise DomainError("no feasible start iterate for the rational-action solver")

    phi = phi_residual(x, u, theta, goal, obs, cfg)
    norm = float(np.linalg.norm(phi))
    for _ in range(max_iters):
        if norm < tol:
            return u
        jac = phi_jacobian_u(x, u, theta, goal, obs, cfg)
        try:
            du = np.linalg.solve(jac, -phi)
        except np.linalg.LinAlgError:
            du = np.linalg.lstsq(jac, -phi, rcond=None)[0]
        alpha = 1.0
        while True:
            trial = VelocityCommand(u.v + alpha * du[0], u.omega + alpha * du[1])
            if _in_domain(x, trial, obs, cfg.ts):
                trial_phi = phi_residual(x, trial, theta, goal, obs, cfg)
                trial_norm = float(np.linalg.norm(trial_phi))
                if trial_norm < norm:
                    u, phi, norm = trial, trial_phi, trial_norm
                    break
            alpha *= 0.5
            if alpha < 1e-12:
                raise ConvergenceError(
                    f"rational-action line search stalled at residual {norm:.3e}"
                )
    if norm < tol:
        return u
    raise ConvergenceError(
        f"rational-action solver did not reach {tol:.1e} in {max_iters} iterations "
        f"(residual {norm:.3e})"
    )


def _q_grid(
    x: RobotState,
    vv: np.ndarray,
    ww: np.ndarray,
    theta: IntentParams,
    goal: GoalPose,
    obs: ObstacleSet,
    ts: float,
):
    """Vectorized Q over a cartesian action grid. Returns (values, in_domain)."""
    c, s = math.cos(x.yaw), math.sin(x.yaw)
    v = vv[:, None]
    w = ww[None, :]
    px = x.x + ts * v * c
    py = x.y + ts * v * s
    e1 = px - goal.gx
    e2 = py - goal.gy
    e3 = np.pi - np.mod(np.pi - (x.yaw + ts * w - goal.gyaw), 2.0 * np.pi)
    val = (
        theta.theta1_x * e1 * e1
        + theta.theta1_y * e2 * e2
        + theta.theta1_yaw * e3 * e3
        + theta.theta2 * (v * v + w * w)
    )
    ok = np.ones(np.broadcast_shapes(v.shape, w.shape), dtype=bool)
    if obs.centers:
        centers = obs.as_array()
        barrier = np.zeros_like(px)
        qmin = np.full_like(px, np.inf)
        for ox, oy in centers:
            q = (px - ox) ** 2 + (py - oy) ** 2
            qmin = np.minimum(qmin, q)
            barrier += np.log(np.maximum(q, _DOMAIN_EPS2) / obs.d_th**2)
        val = val - theta.theta3 * barrier
        ok = ok & np.broadcast_to(qmin > _DOMAIN_EPS2, ok.shape)
    return np.broadcast_to(val, ok.shape), ok


def sample_boltzmann_action(
    x: RobotState,
    theta: IntentParams,
    beta: RationalityCoefficient,
    goal: GoalPose,
    obs: ObstacleSet,
    cfg: DynamicsConfig,
    rng_seed,
    grid_shape: tuple = (41, 41),
    input_box: tuple = DEFAULT_INPUT_BOX,
) -> VelocityCommand:
    """Draw an action from the Boltzmann density exp(-beta Q) discretized on a
    grid over the admissible input box. Deterministic for a fixed seed."""
    (v_lo, v_hi), (w_lo, w_hi) = input_box
    vv = np.linspace(v_lo, v_hi, grid_shape[0])
    ww = np.linspace(w_lo, w_hi, grid_shape[1])
    values, ok = _q_grid(x, vv, ww, theta, goal, obs, cfg.ts)
    if not np.any(ok):
        raise DegenerateDistribution("every grid cell sits on an obstacle center")
    scaled = np.where(ok, beta.beta * values, np.inf)
    scaled = scaled - np.min(scaled)
    weights = np.where(ok, np.exp(-scaled), 0.0)
    flat = weights.ravel()
    total = flat.sum()
    if not total > 0.0:
        raise DegenerateDistribution("Boltzmann weights underflowed to zero")
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(flat.size, p=flat / total)
    iv, iw = np.unravel_index(idx, weights.shape)
    return VelocityCommand(float(vv[iv]), float(ww[iw]))
