import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conav.dynamics import (
    DynamicsConfig,
    RobotState,
    VelocityCommand,
    drift,
    input_matrix,
    step,
    wrap_angle,
)

CFG = DynamicsConfig()

finite = st.floats(-10.0, 10.0, allow_nan=False)
angles = st.floats(-3 * math.pi, 3 * math.pi, allow_nan=False)
vels = st.floats(-0.4, 0.4)
omegas = st.floats(-0.8, 0.8)


def test_wrap_angle_interval():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    for a in np.linspace(-9, 9, 181):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-12)
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-12)


def test_drift_is_identity_bitwise():
    x = RobotState(1.5, -2.0, 0.7)
    assert drift(x) is x
    assert drift(RobotState(0, 0, 0)) == RobotState(0, 0, 0)


def test_input_matrix_values():
    np.testing.assert_allclose(
        input_matrix(RobotState(0, 0, 0), 0.1),
        [[0.1, 0.0], [0.0, 0.0], [0.0, 0.1]],
    )
    np.testing.assert_allclose(
        input_matrix(RobotState(0, 0, math.pi / 2), 0.1),
        [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]],
        atol=1e-12,
    )
    B = input_matrix(RobotState(3, 4, math.pi / 4), 0.1)
    assert B[0, 0] == pytest.approx(0.1 / math.sqrt(2))
    assert B[1, 0] == pytest.approx(0.1 / math.sqrt(2))


def test_step_examples():
    nxt = step(RobotState(0, 0, 0), VelocityCommand(0.4, 0.0), CFG)
    assert (nxt.x, nxt.y, nxt.yaw) == (pytest.approx(0.04), 0.0, 0.0)
    assert step(RobotState(0, 0, 0), VelocityCommand(0.0, 0.0), CFG) == RobotState(0, 0, 0)
    nxt = step(RobotState(0, 0, 0), VelocityCommand(0.0, 0.8), CFG)
    assert nxt.yaw == pytest.approx(0.08)


@given(finite, finite, angles)
def test_zero_input_fixed_point(x, y, yaw):
    s = RobotState(x, y, yaw)
    nxt = step(s, VelocityCommand(0.0, 0.0), CFG)
    assert nxt.x == s.x and nxt.y == s.y
    assert nxt.yaw == pytest.approx(wrap_angle(yaw), abs=1e-12)


@given(finite, finite, st.floats(-1.5, 1.5), vels, omegas, vels, omegas, st.floats(0, 1))
@settings(max_examples=200)
def test_step_affine_in_input(x, y, yaw, v1, w1, v2, w2, a):
    # Affinity holds before yaw wrapping; small yaws keep wrapping inactive.
    s = RobotState(x, y, yaw)
    u1, u2 = np.array([v1, w1]), np.array([v2, w2])
    mix = a * u1 + (1 - a) * u2
    lhs = step(s, VelocityCommand(*mix), CFG).as_array()
    rhs = a * step(s, VelocityCommand(*u1), CFG).as_array() + (1 - a) * step(
        s, VelocityCommand(*u2), CFG
    ).as_array()
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@given(finite, finite, angles, vels, omegas)
def test_displacement_norm_is_speed_times_ts(x, y, yaw, v, w):
    s = RobotState(x, y, yaw)
    nxt = step(s, VelocityCommand(v, w), CFG)
    disp = math.hypot(nxt.x - s.x, nxt.y - s.y)
    assert disp == pytest.approx(abs(v) * CFG.ts, abs=1e-12)


@given(finite, finite, angles, vels, omegas, angles)
@settings(max_examples=200)
def test_rotation_equivariance(x, y, yaw, v, w, phi):
    s = RobotState(x, y, yaw)
    u = VelocityCommand(v, w)
    c, si = math.cos(phi), math.sin(phi)

    def rotate(st_):
        return RobotState(
            c * st_.x - si * st_.y, si * st_.x + c * st_.y, wrap_angle(st_.yaw + phi)
        )

    a = step(rotate(s), u, CFG)
    b = rotate(step(s, u, CFG))
    assert a.x == pytest.approx(b.x, abs=1e-9)
    assert a.y == pytest.approx(b.y, abs=1e-9)
    assert math.isclose(math.sin(a.yaw), math.sin(b.yaw), abs_tol=1e-9)
    assert math.isclose(math.cos(a.yaw), math.cos(b.yaw), abs_tol=1e-9)


def test_config_validation():
    with pytest.raises(ValueError):
        DynamicsConfig(ts=0.0)
    with pytest.raises(ValueError):
        DynamicsConfig(ts=-0.1)
