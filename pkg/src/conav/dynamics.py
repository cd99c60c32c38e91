"""Discrete-time unicycle kinematics in control-affine form.

The robot is a planar unicycle integrated with forward Euler at a fixed
sampling period:

    x+ = a(x) + B(x) u,    x = (px, py, yaw),    u = (v, omega)

where a(x) = x (the state persists under zero input) and B(x) maps body
velocities into world-frame displacements over one period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# Output maps: the full output is the state itself (position + yaw), and the
# planar position is its first two rows.
C_FULL = np.eye(3)
C_XY = np.eye(3)[:2]


def wrap_angle(yaw: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    return math.pi - (math.pi - yaw) % TWO_PI


@dataclass(frozen=True)
class DynamicsConfig:
    ts: float = 0.1  # sampling period [s]

    def __post_init__(self):
        if not self.ts > 0.0:
            raise ValueError(f"ts must be positive, got {self.ts}")


@dataclass(frozen=True)
class RobotState:
    """Planar pose. ``yaw`` is not wrapped on construction; ``step`` and
    ``canonical`` produce values in (-pi, pi]."""

    x: float
    y: float
    yaw: float

    def canonical(self) -> "RobotState":
        return RobotState(self.x, self.y, wrap_angle(self.yaw))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw], dtype=float)

    @staticmethod
    def from_array(arr) -> "RobotState":
        return RobotState(float(arr[0]), float(arr[1]), float(arr[2]))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class VelocityCommand:
    v: float  # linear velocity [m/s]
    omega: float  # angular velocity [rad/s]

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega], dtype=float)

    @staticmethod
    def from_array(arr) -> "VelocityCommand":
        return VelocityCommand(float(arr[0]), float(arr[1]))


def drift(x: RobotState) -> RobotState:
    """Autonomous part a(x) of the Euler-discretized unicycle: the identity."""
    return x


def input_matrix(x: RobotState, ts: float) -> np.ndarray:
    """Input matrix B(x) of shape (3, 2).

    Columns scale (v, omega) into one-period increments of (px, py, yaw).
    """
    c, s = math.cos(x.yaw), math.sin(x.yaw)
    return np.array([[ts * c, 0.0], [ts * s, 0.0], [0.0, ts]])


def step(x: RobotState, u: VelocityCommand, cfg: DynamicsConfig) -> RobotState:
    """Advance one sampling period and wrap the resulting yaw to (-pi, pi]."""
    nxt = x.as_array() + input_matrix(x, cfg.ts) @ u.as_array()
    return RobotState(float(nxt[0]), float(nxt[1]), wrap_angle(float(nxt[2])))
