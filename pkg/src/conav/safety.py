"""Control-barrier bookkeeping for circular keep-out regions.

Each obstacle contributes a barrier h_l(x) = ||C_xy x - o_l|| - d_th; the safe
set is where every barrier is nonnegative, and the one-step certificate

    psi(x, u) = h(step(x, u)) - h(x) + gamma * h(x)

must stay nonnegative for forward invariance under the linear class-K decay
gamma * s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsConfig, RobotState, VelocityCommand, step
from .intent import ObstacleSet

# Added under the square root by trajectory-optimizer evaluations so gradients
# stay finite arbitrarily close to a center.
SQRT_GUARD = 1e-12


@dataclass(frozen=True)
class BarrierConfig:
    gamma: float = 0.1  # decay rate of the class-K function gamma(s) = gamma*s
    d_th: float = 0.5  # safety distance [m], center-to-center

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.d_th > 0.0:
            raise ValueError(f"d_th must be positive, got {self.d_th}")


def h_values(x: RobotState, obs: ObstacleSet) -> np.ndarray:
    """Barrier vector: distance to each obstacle center minus d_th."""
    if not obs.centers:
        return np.zeros(0)
    diff = x.position[None, :] - obs.as_array()
    return np.hypot(diff[:, 0], diff[:, 1]) - obs.d_th


def is_safe(x: RobotState, obs: ObstacleSet) -> bool:
    h = h_values(x, obs)
    return bool(np.all(h >= 0.0))


def psi(
    x: RobotState,
    u: VelocityCommand,
    obs: ObstacleSet,
    bcfg: BarrierConfig,
    dcfg: DynamicsConfig,
) -> np.ndarray:
    """One-step CBF certificate; every component >= 0 means u keeps the decay
    condition h(x+) >= (1 - gamma) h(x) for all obstacles."""
    h_now = h_values(x, obs)
    h_next = h_values(step(x, u, dcfg), obs)
    return h_next - h_now + bcfg.gamma * h_now
