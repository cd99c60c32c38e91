"""Linear blending of autonomy and operator commands.

u = lambda * uR + (1 - lambda) * uH, saturated to the actuator box. When the
operator is silent (both command components inside the deadband) the blend
weight snaps to 1 so the autonomy keeps driving alone.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dynamics import VelocityCommand


@dataclass(frozen=True)
class BlendConfig:
    blend_lambda: float = 0.35  # autonomy weight in [0, 1]
    v_max: float = 0.4  # [m/s]
    omega_max: float = 0.8  # [rad/s]
    deadband: tuple = (0.02, 0.04)  # (v, omega) magnitudes treated as no input

    def __post_init__(self):
        if not 0.0 <= self.blend_lambda <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.blend_lambda}")
        if not (self.v_max > 0.0 and self.omega_max > 0.0):
            raise ValueError("saturation bounds must be positive")


def _clamp(value: float, bound: float) -> float:
    return min(max(value, -bound), bound)


def in_deadband(uH: VelocityCommand, cfg: BlendConfig) -> bool:
    v_dead, w_dead = cfg.deadband
    return abs(uH.v) <= v_dead and abs(uH.omega) <= w_dead


def blend(uR: VelocityCommand, uH: VelocityCommand, cfg: BlendConfig):
    """Blend the two commands; returns (applied command, effective lambda)."""
    lam = 1.0 if in_deadband(uH, cfg) else cfg.blend_lambda
    v = lam * uR.v + (1.0 - lam) * uH.v
    w = lam * uR.omega + (1.0 - lam) * uH.omega
    return VelocityCommand(_clamp(v, cfg.v_max), _clamp(w, cfg.omega_max)), lam
