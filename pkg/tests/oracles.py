"""Independent reference computations used as test oracles.

Everything here is deliberately written from the defining formulas (matrix
algebra, finite differences, exhaustive search) without reusing the package's
analytic shortcuts, so agreement is meaningful.
"""

import numpy as np

from conav.dynamics import DynamicsConfig, RobotState, VelocityCommand, input_matrix
from conav.intent import GoalPose, IntentParams, ObstacleSet, q_value


def fd_gradient(f, u0, h=1e-6):
    """Central-difference gradient of a scalar function of a vector."""
    u0 = np.asarray(u0, dtype=float)
    grad = np.zeros_like(u0)
    for i in range(u0.size):
        up, dn = u0.copy(), u0.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (f(up) - f(dn)) / (2.0 * h)
    return grad


def fd_jacobian(f, u0, h=1e-6):
    """Central-difference Jacobian of a vector function of a vector."""
    u0 = np.asarray(u0, dtype=float)
    f0 = np.asarray(f(u0))
    jac = np.zeros((f0.size, u0.size))
    for i in range(u0.size):
        up, dn = u0.copy(), u0.copy()
        up[i] += h
        dn[i] -= h
        jac[:, i] = (np.asarray(f(up)) - np.asarray(f(dn))) / (2.0 * h)
    return jac


def closed_form_rational(x: RobotState, theta: IntentParams, goal: GoalPose, cfg: DynamicsConfig):
    """Obstacle-free rational action from the linear stationarity system,
    assembled directly from the model matrices: (B'M1B + M2)^-1 B'M1 (g - x)."""
    B = input_matrix(x, cfg.ts)
    M1 = np.diag([theta.theta1_x, theta.theta1_y, theta.theta1_yaw])
    M2 = theta.theta2 * np.eye(2)
    err = goal.as_array() - x.as_array()
    # shortest-angle goal difference for the yaw component
    err[2] = np.pi - (np.pi - err[2]) % (2.0 * np.pi)
    return np.linalg.solve(B.T @ M1 @ B + M2, B.T @ M1 @ err)


def grid_minimize_q(
    x: RobotState,
    theta: IntentParams,
    goal: GoalPose,
    obs: ObstacleSet,
    cfg: DynamicsConfig,
    n: int = 401,
    v_range=(-0.4, 0.4),
    w_range=(-0.8, 0.8),
):
    """Exhaustive minimizer of the value function over an n-by-n action grid.

    Returns (v, omega, cell sizes). Out-of-domain cells are ignored.
    """
    vv = np.linspace(*v_range, n)
    ww = np.linspace(*w_range, n)
    best = (np.inf, 0.0, 0.0)
    for v in vv:
        for w in ww:
            try:
                val = q_value(x, VelocityCommand(v, w), theta, goal, obs, cfg)
            except Exception:
                continue
            if val < best[0]:
                best = (val, v, w)
    dv = (v_range[1] - v_range[0]) / (n - 1)
    dw = (w_range[1] - w_range[0]) / (n - 1)
    return best[1], best[2], dv, dw


def grid_minimize_q_vectorized(
    x, theta, goal, obs, cfg, n=401, v_range=(-0.4, 0.4), w_range=(-0.8, 0.8)
):
    """Same exhaustive oracle as grid_minimize_q but evaluated on arrays, so
    the acceptance suite can afford 100 instances. Kept independent of the
    package's sampler internals: builds Q from its definition directly."""
    vv = np.linspace(*v_range, n)
    ww = np.linspace(*w_range, n)
    c, s = np.cos(x.yaw), np.sin(x.yaw)
    v = vv[:, None]
    w = ww[None, :]
    px = x.x + cfg.ts * v * c
    py = x.y + cfg.ts * v * s
    e1 = px - goal.gx
    e2 = py - goal.gy
    e3 = np.pi - np.mod(np.pi - (x.yaw + cfg.ts * w - goal.gyaw), 2.0 * np.pi)
    val = (
        theta.theta1_x * e1**2
        + theta.theta1_y * e2**2
        + theta.theta1_yaw * e3**2
        + theta.theta2 * (v**2 + w**2)
    )
    val = np.broadcast_to(val, (n, n)).copy()
    for ox, oy in obs.centers:
        q = (px - ox) ** 2 + (py - oy) ** 2
        val -= theta.theta3 * np.log(q / obs.d_th**2)
    iv, iw = np.unravel_index(np.argmin(val), val.shape)
    dv = (v_range[1] - v_range[0]) / (n - 1)
    dw = (w_range[1] - w_range[0]) / (n - 1)
    return float(vv[iv]), float(ww[iw]), dv, dw


def point_segment_distance(p, a, b):
    """Euclidean distance from point p to segment [a, b], by projection."""
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    t = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))
