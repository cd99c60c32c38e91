import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conav.adaptation import (
    AdaptationConfig,
    pgd_step,
    prediction_cost,
    theta_gradient,
    update,
)
from conav.dynamics import DynamicsConfig, RobotState, VelocityCommand
from conav.errors import SingularJacobian
from conav.intent import GoalPose, IntentParams, ObstacleSet, phi_residual, solve_rational_action
from oracles import fd_gradient

DCFG = DynamicsConfig()
ACFG = AdaptationConfig()
NO_OBS = ObstacleSet(centers=(), d_th=0.5)


def random_setting(rng, n_obs=0, obs_dist=(1.5, 3.0)):
    x = RobotState(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2.5, 2.5))
    goal = GoalPose(x.x + rng.uniform(-3, 3), x.y + rng.uniform(-3, 3), x.yaw + rng.uniform(-2, 2))
    theta = IntentParams.from_array(rng.uniform(0.2, 4.0, size=5))
    centers = []
    for _ in range(n_obs):
        ang = rng.uniform(0, 2 * math.pi)
        d = rng.uniform(*obs_dist)
        centers.append((x.x + d * math.cos(ang), x.y + d * math.sin(ang)))
    return x, theta, goal, ObstacleSet(centers=tuple(centers), d_th=0.5)


def implicit_cost(x, theta_arr, uH_meas, goal, obs, u0):
    """J(theta) through a fresh high-accuracy rational-action solve."""
    theta = IntentParams.from_array(theta_arr)
    pred = solve_rational_action(x, theta, goal, obs, DCFG, u0=u0, tol=1e-12)
    return prediction_cost(pred, uH_meas, ACFG)


def test_prediction_cost_examples():
    u = VelocityCommand(0.2, -0.3)
    assert prediction_cost(u, u, ACFG) == 0.0
    got = prediction_cost(VelocityCommand(1, 0), VelocityCommand(0, 0), ACFG)
    assert got == pytest.approx(0.005)
    single = prediction_cost(VelocityCommand(0.1, 0.2), VelocityCommand(0, 0), ACFG)
    double = prediction_cost(VelocityCommand(0.2, 0.4), VelocityCommand(0, 0), ACFG)
    assert double == pytest.approx(4 * single)


def test_theta_gradient_zero_residual():
    rng = np.random.default_rng(1)
    x, theta, goal, obs = random_setting(rng, 0)
    pred = solve_rational_action(x, theta, goal, obs, DCFG, tol=1e-12)
    grad = theta_gradient(x, pred, pred, theta, goal, obs, DCFG, ACFG)
    np.testing.assert_allclose(grad, np.zeros(5), atol=1e-15)


def test_theta_gradient_matches_fd_no_obstacles():
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(50):
        x, theta, goal, obs = random_setting(rng, 0)
        pred = solve_rational_action(x, theta, goal, obs, DCFG, tol=1e-12)
        meas = VelocityCommand(pred.v + rng.uniform(-0.2, 0.2), pred.omega + rng.uniform(-0.2, 0.2))
        grad = theta_gradient(x, pred, meas, theta, goal, obs, DCFG, ACFG)
        fd = fd_gradient(
            lambda tt: implicit_cost(x, tt, meas, goal, obs, pred), theta.as_array(), h=1e-5
        )
        assert np.linalg.norm(grad - fd) <= 1e-4 * max(1.0, np.linalg.norm(fd)), (
            f"grad {grad} vs fd {fd}"
        )
        checked += 1
    assert checked == 50


def test_theta_gradient_matches_fd_one_obstacle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        x, theta, goal, obs = random_setting(rng, 1)
        pred = solve_rational_action(x, theta, goal, obs, DCFG, tol=1e-12)
        meas = VelocityCommand(pred.v + rng.uniform(-0.2, 0.2), pred.omega + rng.uniform(-0.2, 0.2))
        grad = theta_gradient(x, pred, meas, theta, goal, obs, DCFG, ACFG)
        fd = fd_gradient(
            lambda tt: implicit_cost(x, tt, meas, goal, obs, pred), theta.as_array(), h=1e-5
        )
        assert np.linalg.norm(grad - fd) <= 1e-3 * max(1.0, np.linalg.norm(fd))


def test_theta_gradient_rejects_nonstationary_prediction():
    rng = np.random.default_rng(4)
    x, theta, goal, obs = random_setting(rng, 0)
    bad = VelocityCommand(0.3, 0.5)
    assert np.linalg.norm(phi_residual(x, bad, theta, goal, obs, DCFG)) > 1e-4
    with pytest.raises(ValueError):
        theta_gradient(x, bad, bad, theta, goal, obs, DCFG, ACFG)


def test_theta_gradient_conditioning_guard():
    rng = np.random.default_rng(5)
    x, theta, goal, obs = random_setting(rng, 0)
    pred = solve_rational_action(x, theta, goal, obs, DCFG, tol=1e-12)
    meas = VelocityCommand(pred.v + 0.1, pred.omega)
    tight = AdaptationConfig(conditioning_limit=1.0)
    with pytest.raises(SingularJacobian):
        theta_gradient(x, pred, meas, theta, goal, obs, DCFG, tight)


def test_pgd_step_examples():
    theta = IntentParams.from_array([0.4, 0.4, 5, 2, 2])
    same = pgd_step(theta, np.zeros(5), ACFG)
    assert same == theta
    pushed = pgd_step(theta, np.array([0, 0, 0, 0, 3.0]), ACFG)  # eta3 = 2 - 3 = -1
    assert pushed.theta3 == pytest.approx(1e-3)
    # projection idempotence
    g = np.array([5.0, -3.0, 200.0, -1.0, 0.5])
    once = pgd_step(theta, g, ACFG)
    again = pgd_step(once, np.zeros(5), ACFG)
    assert once == again


def test_pgd_step_tied_averages_before_clamp():
    theta = IntentParams.make_tied(0.4, 5, 2, 2)
    stepped = pgd_step(theta, np.array([-0.2, 0.0, 0, 0, 0]), ACFG)
    assert stepped.tied
    assert stepped.theta1_x == stepped.theta1_y == pytest.approx(0.5)


@given(st.lists(st.floats(-1e4, 1e4), min_size=5, max_size=5))
@settings(max_examples=200)
def test_pgd_projection_always_inside_box(grad):
    theta = IntentParams.from_array([0.4, 0.4, 5, 2, 2])
    out = pgd_step(theta, np.array(grad), ACFG)
    arr = out.as_array()
    assert np.all(arr >= np.array(ACFG.theta_lower) - 1e-15)
    assert np.all(arr <= np.array(ACFG.theta_upper) + 1e-15)


def test_small_step_never_increases_cost():
    rng = np.random.default_rng(6)
    cfg = AdaptationConfig(mu=1e-4)
    for _ in range(20):
        x, theta, goal, obs = random_setting(rng, 0)
        pred = solve_rational_action(x, theta, goal, obs, DCFG, tol=1e-12)
        meas = VelocityCommand(pred.v + rng.uniform(-0.2, 0.2), pred.omega + rng.uniform(-0.2, 0.2))
        before = implicit_cost(x, theta.as_array(), meas, goal, obs, pred)
        grad = theta_gradient(x, pred, meas, theta, goal, obs, DCFG, cfg)
        after_theta = pgd_step(theta, grad, cfg)
        after = implicit_cost(x, after_theta.as_array(), meas, goal, obs, pred)
        assert after <= before + 1e-12


def test_update_deadband_skips():
    rng = np.random.default_rng(7)
    x, theta, goal, obs = random_setting(rng, 0)
    rec = update(theta, x, VelocityCommand(0.1, 0.1), VelocityCommand(0.0, 0.0), goal, obs, DCFG, ACFG)
    assert rec.skipped and rec.skip_reason == "deadband"
    assert rec.theta_after == theta
    rec2 = update(theta, x, VelocityCommand(0.1, 0.1), VelocityCommand(0.019, -0.039), goal, obs, DCFG, ACFG)
    assert rec2.skipped and rec2.skip_reason == "deadband"


def test_update_zero_gradient_keeps_theta():
    rng = np.random.default_rng(8)
    x, theta, goal, obs = random_setting(rng, 0)
    pred = solve_rational_action(x, theta, goal, obs, DCFG, tol=1e-12)
    meas = VelocityCommand(pred.v, pred.omega)
    if abs(meas.v) <= 0.02 and abs(meas.omega) <= 0.04:
        pytest.skip("rational action landed in the deadband for this draw")
    rec = update(theta, x, pred, meas, goal, obs, DCFG, ACFG)
    assert not rec.skipped
    np.testing.assert_allclose(rec.theta_after.as_array(), theta.as_array(), atol=1e-12)


def test_update_polishes_nonstationary_prediction():
    rng = np.random.default_rng(9)
    x, theta, goal, obs = random_setting(rng, 0)
    rough = solve_rational_action(x, theta, goal, obs, DCFG)
    bumped = VelocityCommand(rough.v + 0.05, rough.omega - 0.05)
    rec = update(theta, x, bumped, VelocityCommand(0.3, 0.3), goal, obs, DCFG, ACFG)
    assert not rec.skipped
    # the recorded prediction is the polished stationary point, not the input
    assert abs(rec.predicted.v - rough.v) < 1e-6
    assert abs(rec.predicted.omega - rough.omega) < 1e-6


def test_update_singular_jacobian_skips():
    rng = np.random.default_rng(10)
    x, theta, goal, obs = random_setting(rng, 0)
    pred = solve_rational_action(x, theta, goal, obs, DCFG, tol=1e-12)
    tight = AdaptationConfig(conditioning_limit=1.0)
    rec = update(theta, x, pred, VelocityCommand(0.3, 0.3), goal, obs, DCFG, tight)
    assert rec.skipped and rec.skip_reason == "singular_jacobian"
    assert rec.theta_after == theta


def test_update_invariant_to_obstacle_permutation():
    rng = np.random.default_rng(11)
    x, theta, goal, obs = random_setting(rng, 3)
    pred = solve_rational_action(x, theta, goal, obs, DCFG, tol=1e-12)
    meas = VelocityCommand(0.3, 0.3)
    rec_a = update(theta, x, pred, meas, goal, obs, DCFG, ACFG)
    flipped = ObstacleSet(centers=tuple(reversed(obs.centers)), d_th=obs.d_th)
    rec_b = update(theta, x, pred, meas, goal, flipped, DCFG, ACFG)
    np.testing.assert_allclose(
        rec_a.theta_after.as_array(), rec_b.theta_after.as_array(), atol=1e-12
    )


def test_update_fresh_solve_mode():
    rng = np.random.default_rng(12)
    x, theta, goal, obs = random_setting(rng, 1)
    cfg = AdaptationConfig(fresh_solve=True)
    stale = VelocityCommand(0.2, 0.2)  # ignored by fresh-solve mode
    rec = update(theta, x, stale, VelocityCommand(0.3, 0.3), goal, obs, DCFG, cfg)
    assert not rec.skipped
    resid = phi_residual(x, rec.predicted, theta, goal, obs, DCFG)
    assert np.linalg.norm(resid) < 1e-8


def test_adaptation_config_validation():
    with pytest.raises(ValueError):
        AdaptationConfig(mu=0.0)
    with pytest.raises(ValueError):
        AdaptationConfig(theta_lower=(0.0,) * 5)
    with pytest.raises(ValueError):
        AdaptationConfig(theta_lower=(2.0,) * 5, theta_upper=(1.0,) * 5)
