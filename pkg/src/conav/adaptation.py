"""Online adaptation of the intent parameters by projected gradient descent.

Each tick compares the predicted human action against the measured one,
differentiates the squared deviation through the stationarity system
phi(x, uH, theta) = 0 (implicit function theorem), takes one gradient step,
and projects back onto the admissible parameter box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsConfig, RobotState, VelocityCommand
from .errors import ConvergenceError, DomainError, SingularJacobian
from .intent import (
    EPSILON_THETA,
    GoalPose,
    IntentParams,
    ObstacleSet,
    phi_jacobian_theta,
    phi_jacobian_u,
    phi_residual,
    solve_rational_action,
)

STATIONARITY_TOL = 1e-4


@dataclass(frozen=True)
class AdaptationConfig:
    gamma_weight: tuple = (0.01, 0.01)  # diagonal of Gamma, action space
    mu: float = 1.0  # PGD step size
    theta_lower: tuple = (EPSILON_THETA,) * 5
    theta_upper: tuple = (100.0,) * 5
    deadband: tuple = (0.02, 0.04)  # (v, omega); no update below these
    conditioning_limit: float = 1e8
    # When set, the prediction is re-derived from a fresh rational-action solve
    # instead of trusting the optimizer's first predicted human input.
    fresh_solve: bool = False

    def __post_init__(self):
        lo = np.asarray(self.theta_lower, dtype=float)
        hi = np.asarray(self.theta_upper, dtype=float)
        if not self.mu > 0.0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if np.any(lo < EPSILON_THETA):
            raise ValueError(f"theta_lower must be >= {EPSILON_THETA}")
        if np.any(lo > hi):
            raise ValueError("theta_lower must not exceed theta_upper")


@dataclass(frozen=True)
class AdaptationRecord:
    theta_before: IntentParams
    theta_after: IntentParams
    predicted: VelocityCommand
    measured: VelocityCommand
    cost_J: float
    skipped: bool
    skip_reason: str  # one of: deadband, singular_jacobian, domain_error, none


def prediction_cost(
    predicted: VelocityCommand, measured: VelocityCommand, cfg: AdaptationConfig
) -> float:
    """Half the Gamma-weighted squared deviation between the two actions."""
    resid = predicted.as_array() - measured.as_array()
    gamma = np.asarray(cfg.gamma_weight, dtype=float)
    return float(0.5 * resid @ (gamma * resid))


def theta_gradient(
    x: RobotState,
    uH_pred: VelocityCommand,
    uH_meas: VelocityCommand,
    theta: IntentParams,
    goal: GoalPose,
    obs: ObstacleSet,
    dcfg: DynamicsConfig,
    acfg: AdaptationConfig,
) -> np.ndarray:
    """Gradient of the prediction cost in theta, via implicit differentiation
    of the stationarity system at uH_pred.

    uH_pred must be (numerically) stationary: ||phi|| <= 1e-4. Raises
    SingularJacobian when the action-space Jacobian is too ill-conditioned for
    the implicit function theorem to apply.
    """
    resid_phi = phi_residual(x, uH_pred, theta, goal, obs, dcfg)
    if float(np.linalg.norm(resid_phi)) > STATIONARITY_TOL:
        raise ValueError(
            "uH_pred is not a stationary point of the value function "
            f"(||phi|| = {np.linalg.norm(resid_phi):.3e})"
        )
    jac_u = phi_jacobian_u(x, uH_pred, theta, goal, obs, dcfg)
    cond = np.linalg.cond(jac_u)
    if not np.isfinite(cond) or cond > acfg.conditioning_limit:
        raise SingularJacobian(
            f"action Jacobian condition number {cond:.3e} exceeds "
            f"{acfg.conditioning_limit:.1e}"
        )
    jac_theta = phi_jacobian_theta(x, uH_pred, theta, goal, obs, dcfg)
    resid = uH_pred.as_array() - uH_meas.as_array()
    weighted = np.asarray(acfg.gamma_weight, dtype=float) * resid
    adjoint = np.linalg.solve(jac_u.T, weighted)
    return -(jac_theta.T @ adjoint)


def pgd_step(theta: IntentParams, grad, acfg: AdaptationConfig) -> IntentParams:
    """One projected-gradient step: eta = theta - mu*grad, clamped onto the
    parameter box. In tied mode the x/y goal weights are averaged first."""
    eta = theta.as_array() - acfg.mu * np.asarray(grad, dtype=float)
    if theta.tied:
        eta[0] = eta[1] = 0.5 * (eta[0] + eta[1])
    eta = np.clip(eta, np.asarray(acfg.theta_lower), np.asarray(acfg.theta_upper))
    return IntentParams.from_array(eta, tied=theta.tied)


def update(
    theta: IntentParams,
    x: RobotState,
    uH_pred: VelocityCommand,
    uH_meas: VelocityCommand,
    goal: GoalPose,
    obs: ObstacleSet,
    dcfg: DynamicsConfig,
    acfg: AdaptationConfig,
) -> AdaptationRecord:
    """Apply one adaptation step, or record why it was skipped.

    All failure modes are absorbed into the record: measured commands inside
    the deadband pause adaptation entirely; a non-stationary or barrier-domain
    violating prediction is first polished by the rational-action solver and
    the update is skipped if that fails; an ill-conditioned Jacobian skips too.
    """

    def skipped(reason: str, pred: VelocityCommand) -> AdaptationRecord:
        return AdaptationRecord(
            theta_before=theta,
            theta_after=theta,
            predicted=pred,
            measured=uH_meas,
            cost_J=prediction_cost(pred, uH_meas, acfg),
            skipped=True,
            skip_reason=reason,
        )

    v_dead, w_dead = acfg.deadband
    if abs(uH_meas.v) <= v_dead and abs(uH_meas.omega) <= w_dead:
        return skipped("deadband", uH_pred)

    pred = uH_pred
    try:
        if acfg.fresh_solve:
            pred = solve_rational_action(x, theta, goal, obs, dcfg, u0=uH_pred)
        else:
            resid = phi_residual(x, pred, theta, goal, obs, dcfg)
            if float(np.linalg.norm(resid)) > STATIONARITY_TOL:
                # The optimizer only enforces stationarity to its own
                # tolerance; polish before differentiating through it.
                pred = solve_rational_action(x, theta, goal, obs, dcfg, u0=uH_pred)
    except (ConvergenceError, DomainError):
        return skipped("domain_error", pred)

    try:
        grad = theta_gradient(x, pred, uH_meas, theta, goal, obs, dcfg, acfg)
    except SingularJacobian:
        return skipped("singular_jacobian", pred)
    except DomainError:
        return skipped("domain_error", pred)

    theta_after = pgd_step(theta, grad, acfg)
    return AdaptationRecord(
        theta_before=theta,
        theta_after=theta_after,
        predicted=pred,
        measured=uH_meas,
        cost_J=prediction_cost(pred, uH_meas, acfg),
        skipped=False,
        skip_reason="none",
    )
