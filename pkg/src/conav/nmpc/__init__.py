"""Receding-horizon planner: Gauss-Newton SQP over a joint robot/human
input trajectory with discrete-time barrier constraints.

Public surface::

    cfg = NmpcConfig()
    ref = build_reference(scenario.goal, cfg.horizon)
    sol = solve(x0, theta_hat, scenario, cfg)          # raises SolverFailure
    warm = warm_shift(sol)                             # next-tick initial guess
    desc = transcribe(x0, theta_hat, scenario, cfg)    # sizes only, no solve
"""

from .config import (
    HorizonSolution,
    NmpcConfig,
    ReferenceTrajectory,
    build_reference,
    cost,
    trajectory_cost,
    warm_shift,
)
from .transcription import NlpDescription, Transcription, transcribe
from .sqp import NmpcSolver, solve

__all__ = [
    "HorizonSolution",
    "NmpcConfig",
    "NlpDescription",
    "NmpcSolver",
    "ReferenceTrajectory",
    "Transcription",
    "build_reference",
    "cost",
    "solve",
    "trajectory_cost",
    "transcribe",
    "warm_shift",
]
