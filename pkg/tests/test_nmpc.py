"""Planner tests.

The linear algebra here is checked against independent references built a
different way: Jacobian blocks against central finite differences of the
residual functions, the banded KKT against a dense matrix reassembled from
operator probes, the interior-point solver against cvxopt on the same data,
and the full SQP against a dense equality-QP solve on instances engineered
to *be* quadratic programs.
"""

import numpy as np
import pytest

from conav.dynamics import DynamicsConfig, RobotState, VelocityCommand, step
from conav.intent import GoalPose, IntentParams, ObstacleSet
from conav.nmpc import (
    HorizonSolution,
    NmpcConfig,
    ReferenceTrajectory,
    build_reference,
    cost,
    solve,
    trajectory_cost,
    transcribe,
    warm_shift,
)
from conav.nmpc.qp import solve_qp
from conav.nmpc.transcription import Transcription
from conav.kernels import KL, KU
from conav.sim.scenario import Scenario, load_builtin, random_scenario

THETA = IntentParams(0.4, 0.4, 5.0, 2.0, 2.0)


def make_scenario(n_obs=3, seed=0, d_th=0.5):
    if n_obs == 0:
        return Scenario(
            name="test-open",
            start=RobotState(0.65, 2.7, 0.0),
            goal=GoalPose(4.0, 3.0, 0.5),
            obstacles=ObstacleSet(np.zeros((0, 2)), d_th=d_th),
            bounds=(0.0, 8.1, 0.0, 5.4),
        )
    return random_scenario(seed, n_obstacles=n_obs, d_th=d_th)


def random_iterate(tr, rng, spread=0.6):
    """A perturbed but in-domain point to linearize around."""
    n = tr.n
    xs = np.empty((n + 1, 3))
    xs[0] = tr.x0
    for k in range(n):
        drift = rng.uniform(-spread, spread, size=3) * np.array([0.1, 0.1, 0.3])
        xs[k + 1] = xs[k] + drift
    ur = rng.uniform(-0.3, 0.3, size=(n, 2))
    uh = rng.uniform(-0.3, 0.3, size=(n, 2))
    dl = rng.uniform(-0.05, 0.05, size=n)
    return tr.pack(xs, ur, uh, dl)


# ----- finite-difference checks of the kernel linearization -----------------


def test_kernel_jacobians_match_finite_differences():
    rng = np.random.default_rng(5)
    sc = make_scenario(n_obs=4, seed=3)
    cfg = NmpcConfig(horizon=5)
    tr = Transcription(sc.start, THETA, sc, cfg)
    z = random_iterate(tr, rng)
    jac = tr.linearize(z)

    def eq_of(zv):
        return tr.eq_vector(tr.residuals(zv))

    def ineq_of(zv):
        return tr.ineq_vector(tr.residuals(zv))

    h = 1e-6
    for probe in range(tr.n_prim):
        zp, zm = z.copy(), z.copy()
        zp[probe] += h
        zm[probe] -= h
        col_eq = (eq_of(zp) - eq_of(zm)) / (2 * h)
        e = np.zeros(tr.n_prim)
        e[probe] = 1.0
        np.testing.assert_allclose(
            tr.eq_matvec(jac, e), col_eq, atol=5e-5,
            err_msg=f"equality Jacobian column {probe}",
        )
        col_in = (ineq_of(zp) - ineq_of(zm)) / (2 * h)
        np.testing.assert_allclose(
            tr.ineq_matvec(jac, e), col_in, atol=5e-5,
            err_msg=f"inequality Jacobian column {probe}",
        )


def test_kernel_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    sc = make_scenario(n_obs=2, seed=8)
    cfg = NmpcConfig(horizon=4)
    tr = Transcription(sc.start, THETA, sc, cfg)
    z = random_iterate(tr, rng)
    g = tr.linearize(z)["grad"]
    h = 1e-6
    fd = np.empty_like(g)
    for i in range(tr.n_prim):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        fd[i] = (tr.residuals(zp)["cost"] - tr.residuals(zm)["cost"]) / (2 * h)
    np.testing.assert_allclose(g, fd, atol=2e-4)


def test_kernel_cost_matches_public_formula():
    rng = np.random.default_rng(2)
    sc = make_scenario(n_obs=3, seed=1)
    cfg = NmpcConfig(horizon=7)
    tr = Transcription(sc.start, THETA, sc, cfg)
    z = random_iterate(tr, rng)
    xs, ur, uh, dl = tr.split(z)
    expected = trajectory_cost(xs, ur, uh, dl, tr.ref.poses, cfg)
    assert tr.residuals(z)["cost"] == pytest.approx(expected, rel=1e-12)


def test_operator_adjoint_consistency():
    rng = np.random.default_rng(7)
    sc = make_scenario(n_obs=5, seed=2)
    cfg = NmpcConfig(horizon=6)
    tr = Transcription(sc.start, THETA, sc, cfg)
    jac = tr.linearize(random_iterate(tr, rng))
    for _ in range(20):
        v = rng.standard_normal(tr.n_prim)
        y = rng.standard_normal(tr.m_eq)
        w = rng.standard_normal(tr.m_in)
        lhs = float(tr.eq_matvec(jac, v) @ y)
        rhs = float(v @ tr.eq_rmatvec(jac, y))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)
        lhs = float(tr.ineq_matvec(jac, v) @ w)
        rhs = float(v @ tr.ineq_rmatvec(jac, w))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


# ----- band assembly vs dense reconstruction --------------------------------


def band_to_dense(band, n):
    dense = np.zeros((n, n))
    for j in range(n):
        for i in range(max(0, j - KU), min(n - 1, j + KL) + 1):
            dense[i, j] = band[KL + KU + i - j, j]
    return dense


def dense_kkt_reference(tr, jac, sigma):
    """KKT matrix assembled a second way: operator probes with unit vectors."""
    n_kkt = tr.n_kkt
    E = np.zeros((tr.m_eq, tr.n_prim))
    G = np.zeros((tr.m_in, tr.n_prim))
    for i in range(tr.n_prim):
        e = np.zeros(tr.n_prim)
        e[i] = 1.0
        E[:, i] = tr.eq_matvec(jac, e)
        if tr.m_in:
            G[:, i] = tr.ineq_matvec(jac, e)
    H = np.diag(tr.kern.h_prim)
    if tr.m_in and sigma is not None:
        H = H + G.T @ np.diag(sigma) @ G
    dense = np.zeros((n_kkt, n_kkt))
    p, q = tr.prim2kkt, tr.eq2kkt
    dense[np.ix_(p, p)] = H
    dense[np.ix_(q, p)] = E
    dense[np.ix_(p, q)] = E.T
    dense[q, q] = -1.0e-11
    return dense


def test_band_assembly_matches_dense_reference():
    rng = np.random.default_rng(3)
    sc = make_scenario(n_obs=3, seed=4)
    cfg = NmpcConfig(horizon=4)
    tr = Transcription(sc.start, THETA, sc, cfg)
    jac = tr.linearize(random_iterate(tr, rng))
    sigma = rng.uniform(0.1, 2.0, size=tr.m_in)

    band = tr.kern.base_band(jac).copy()
    sig_cbf, sig_box, sig_dlo = tr.sigma_split(sigma)
    tr.kern.add_sigma(band, jac, sig_cbf, sig_box)
    if sig_dlo is not None:
        band[KL + KU, tr.prim2kkt[tr.off_dl :]] += sig_dlo
    got = band_to_dense(band, tr.n_kkt)
    want = dense_kkt_reference(tr, jac, sigma)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_band_assembly_no_obstacles():
    rng = np.random.default_rng(9)
    sc = make_scenario(n_obs=0)
    cfg = NmpcConfig(horizon=3)
    tr = Transcription(sc.start, THETA, sc, cfg)
    jac = tr.linearize(random_iterate(tr, rng))
    sigma = rng.uniform(0.1, 2.0, size=tr.m_in)
    band = tr.kern.base_band(jac).copy()
    sig_cbf, sig_box, sig_dlo = tr.sigma_split(sigma)
    tr.kern.add_sigma(band, jac, sig_cbf, sig_box)
    assert sig_dlo is None
    np.testing.assert_allclose(
        band_to_dense(band, tr.n_kkt), dense_kkt_reference(tr, jac, sigma), atol=1e-12
    )


# ----- interior point vs cvxopt ---------------------------------------------


def qp_reference_cvxopt(tr, jac, res):
    """Solve the same local QP with cvxopt's cone solver."""
    cvxopt = pytest.importorskip("cvxopt")
    from cvxopt import matrix, solvers

    n = tr.n_prim
    E = np.zeros((tr.m_eq, n))
    G = np.zeros((tr.m_in, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        E[:, i] = tr.eq_matvec(jac, e)
        if tr.m_in:
            G[:, i] = tr.ineq_matvec(jac, e)
    P = np.diag(tr.kern.h_prim)
    q = jac["grad"].copy()
    c_eq = tr.eq_vector(res)
    c_in = tr.ineq_vector(res)
    solvers.options["show_progress"] = False
    solvers.options["abstol"] = 1e-10
    solvers.options["reltol"] = 1e-10
    solvers.options["feastol"] = 1e-10
    # cvxopt convention: minimize 1/2 x'Px + q'x  s.t.  Gx <= h, Ax = b
    sol = solvers.qp(
        matrix(P),
        matrix(q),
        matrix(-G) if tr.m_in else matrix(np.zeros((0, n))),
        matrix(c_in) if tr.m_in else matrix(np.zeros(0)),
        matrix(E),
        matrix(-c_eq),
    )
    assert sol["status"] == "optimal"
    return np.asarray(sol["x"]).ravel()


@pytest.mark.parametrize("n_obs,seed", [(0, 0), (2, 1), (5, 2), (3, 3)])
def test_qp_step_matches_cvxopt(n_obs, seed):
    rng = np.random.default_rng(seed)
    sc = make_scenario(n_obs=n_obs, seed=seed)
    cfg = NmpcConfig(horizon=5)
    tr = Transcription(sc.start, THETA, sc, cfg)
    z = random_iterate(tr, rng, spread=0.4)
    res = tr.residuals(z)
    jac = tr.linearize(z)
    got = solve_qp(tr, z, jac, res, 1e-10)
    want = qp_reference_cvxopt(tr, jac, res)
    np.testing.assert_allclose(got.dz, want, atol=5e-6)


def test_qp_respects_locked_component():
    rng = np.random.default_rng(4)
    sc = make_scenario(n_obs=2, seed=5)
    cfg = NmpcConfig(horizon=4, input_bounds=(0.4, 0.0))
    tr = Transcription(sc.start, THETA, sc, cfg)
    z = random_iterate(tr, rng, spread=0.3)
    res = tr.residuals(z)
    jac = tr.linearize(z)
    qp = solve_qp(tr, z, jac, res, 1e-9)
    _, ur, _, _ = tr.split(z + qp.dz)
    np.testing.assert_allclose(ur[:, 1], 0.0, atol=1e-12)


# ----- transcription sizes ----------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 7, 25, 100])
@pytest.mark.parametrize("n_obs", [0, 1, 4, 10])
def test_transcription_sizes(n, n_obs):
    sc = make_scenario(n_obs=n_obs, seed=n_obs)
    cfg = NmpcConfig(horizon=n)
    d = transcribe(sc.start, THETA, sc, cfg)
    assert d.n_variables == 8 * n + 3
    assert d.n_states == 3 * (n + 1)
    assert d.n_robot_inputs == 2 * n
    assert d.n_human_inputs == 2 * n
    assert d.n_slacks == n
    assert d.n_equalities == 5 * n + 3
    assert d.n_eq_pin == 3
    assert d.n_eq_dynamics == 3 * n
    assert d.n_eq_stationarity == 2 * n
    assert d.n_cbf_inequalities == n * n_obs
    assert d.n_box_inequalities == 4 * n
    assert d.n_equalities == d.n_eq_pin + d.n_eq_dynamics + d.n_eq_stationarity


def test_reference_horizon_size_default_n100():
    sc = load_builtin("lab_gA")
    d = transcribe(sc.start, THETA, sc, NmpcConfig())
    assert d.n_variables == 803
    assert d.n_equalities == 503
    assert d.n_cbf_inequalities == 1000
    assert d.n_box_inequalities == 400


# ----- SQP behavior -----------------------------------------------------------


def dense_equality_qp_reference(tr, z0):
    """For instances that are exactly QPs (lambda=1, yaw locked, no
    obstacles): minimize the quadratic cost subject to the affine equality
    constraints, by direct dense KKT solve around the point z0."""
    res = tr.residuals(z0)
    jac = tr.linearize(z0)
    n = tr.n_prim
    E = np.zeros((tr.m_eq, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        E[:, i] = tr.eq_matvec(jac, e)
    lock_idx, lock_target = tr.lock_targets(z0)
    # append lock rows as equalities so the dense problem matches
    L = np.zeros((len(lock_idx), n))
    for r, i in enumerate(lock_idx):
        L[r, i] = 1.0
    A = np.vstack([E, L])
    b = np.concatenate([-tr.eq_vector(res), lock_target])
    H = np.diag(tr.kern.h_prim)
    g = jac["grad"]
    kkt = np.block([[H, A.T], [A, np.zeros((A.shape[0], A.shape[0]))]])
    rhs = np.concatenate([-g, b])
    sol = np.linalg.solve(kkt, rhs)
    return z0 + sol[:n]


def test_sqp_is_exact_on_quadratic_instances():
    """lambda = 1 and a locked yaw input make the transcribed problem an
    equality-constrained QP; the SQP must land on its exact solution."""
    sc = make_scenario(n_obs=0)
    cfg = NmpcConfig(
        horizon=8,
        blend_lambda=1.0,
        input_bounds=(0.0, 0.0),  # both inputs locked: pure prediction QP
    )
    tr = Transcription(sc.start, THETA, sc, cfg)
    from conav.nmpc.sqp import _cold_start

    z0 = _cold_start(tr)
    want = dense_equality_qp_reference(tr, z0)
    sol = solve(sc.start, THETA, sc, cfg)
    got = tr.pack(sol.states, sol.robot_inputs, sol.human_inputs, sol.slacks)
    assert sol.converged
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_sqp_quadratic_instance_with_free_speed():
    """Yaw locked but v free (interior solution): still an exact QP."""
    sc = make_scenario(n_obs=0)
    goal_ahead = Scenario(
        name="ahead",
        start=RobotState(1.0, 2.0, 0.0),
        goal=GoalPose(1.6, 2.0, 0.0),
        obstacles=sc.obstacles,
        bounds=sc.bounds,
    )
    cfg = NmpcConfig(horizon=6, blend_lambda=1.0, input_bounds=(10.0, 0.0))
    tr = Transcription(goal_ahead.start, THETA, goal_ahead, cfg)
    from conav.nmpc.sqp import _cold_start

    z0 = _cold_start(tr)
    want = dense_equality_qp_reference(tr, z0)
    sol = solve(goal_ahead.start, THETA, goal_ahead, cfg)
    got = tr.pack(sol.states, sol.robot_inputs, sol.human_inputs, sol.slacks)
    assert sol.converged
    # v stays strictly inside the (loose) box, so the box rows are inactive
    # and the dense equality reference applies
    assert np.abs(sol.robot_inputs[:, 0]).max() < 9.0
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_solution_states_resimulate():
    """Returned states must replay through the plant model under the blended
    inputs (dynamics defects actually closed, not just small)."""
    sc = load_builtin("console_smoke")
    cfg = NmpcConfig(horizon=12)
    sol = solve(sc.start, THETA, sc, cfg)
    assert sol.max_constraint_violation <= 1e-4
    lam = cfg.blend_lambda
    x = RobotState.from_array(sol.states[0])
    dyn = DynamicsConfig(ts=cfg.ts)
    for k in range(cfg.horizon):
        u = lam * sol.robot_inputs[k] + (1 - lam) * sol.human_inputs[k]
        x = step(x, VelocityCommand.from_array(u), dyn)
        # states are stored unwrapped along the horizon; compare wrapped yaw
        dyaw = (x.yaw - sol.states[k + 1, 2] + np.pi) % (2 * np.pi) - np.pi
        assert abs(x.x - sol.states[k + 1, 0]) < 1e-4
        assert abs(x.y - sol.states[k + 1, 1]) < 1e-4
        assert abs(dyaw) < 1e-4


def test_first_state_pins_measurement():
    sc = load_builtin("lab_gA")
    x0 = RobotState(0.9, 2.5, 0.3)
    sol = solve(x0, THETA, sc, NmpcConfig(horizon=8))
    np.testing.assert_array_equal(sol.states[0], x0.as_array())


def test_solve_at_goal_returns_near_zero_command():
    sc = make_scenario(n_obs=0)
    at_goal = Scenario(
        name="parked",
        start=RobotState(sc.goal.gx, sc.goal.gy, sc.goal.gyaw),
        goal=sc.goal,
        obstacles=sc.obstacles,
        bounds=sc.bounds,
    )
    sol = solve(at_goal.start, THETA, at_goal, NmpcConfig(horizon=10))
    assert sol.converged
    ref = build_reference(at_goal.goal, 10)
    assert cost(sol, ref, NmpcConfig(horizon=10)) <= 1e-6
    assert np.abs(sol.robot_inputs).max() <= 1e-4


def test_warm_start_does_not_regress():
    sc = load_builtin("console_smoke")
    cfg = NmpcConfig(horizon=10)
    first = solve(sc.start, THETA, sc, cfg)
    again = solve(sc.start, THETA, sc, cfg, warm=first)
    assert again.sqp_iterations <= first.sqp_iterations
    ref = build_reference(sc.goal, cfg.horizon)
    assert cost(again, ref, cfg) <= cost(first, ref, cfg) + 1e-8


def test_warm_shift_semantics():
    n = 5
    rng = np.random.default_rng(0)
    sol = HorizonSolution(
        states=rng.standard_normal((n + 1, 3)),
        robot_inputs=rng.standard_normal((n, 2)),
        human_inputs=rng.standard_normal((n, 2)),
        slacks=rng.uniform(0, 1, n),
    )
    shifted = warm_shift(sol)
    np.testing.assert_array_equal(shifted.states[:-1], sol.states[1:])
    np.testing.assert_array_equal(shifted.states[-1], sol.states[-1])
    np.testing.assert_array_equal(shifted.robot_inputs[:-1], sol.robot_inputs[1:])
    np.testing.assert_array_equal(shifted.robot_inputs[-1], sol.robot_inputs[-1])
    np.testing.assert_array_equal(shifted.human_inputs[:-1], sol.human_inputs[1:])
    assert shifted.slacks[-1] == 0.0
    np.testing.assert_array_equal(shifted.slacks[:-1], sol.slacks[1:])
    x_new = RobotState(9.0, 9.0, 0.5)
    repinned = warm_shift(sol, measured=x_new)
    np.testing.assert_array_equal(repinned.states[0], x_new.as_array())


def test_robot_inputs_stay_in_box():
    sc = load_builtin("lab_gB")
    cfg = NmpcConfig(horizon=15)
    sol = solve(sc.start, THETA, sc, cfg)
    assert np.all(np.abs(sol.robot_inputs[:, 0]) <= cfg.input_bounds[0] + 1e-7)
    assert np.all(np.abs(sol.robot_inputs[:, 1]) <= cfg.input_bounds[1] + 1e-7)


def test_slack_stays_small_when_barrier_inactive():
    """Comfortably feasible geometry: slacks should not be exercised."""
    sc = make_scenario(n_obs=0)
    sol = solve(sc.start, THETA, sc, NmpcConfig(horizon=10))
    assert np.abs(sol.slacks).max() <= 1e-6


def test_stationarity_ties_human_prediction_to_intent_model():
    """At a converged solution the uH trajectory must satisfy the intent
    stationarity condition at every knot (checked via the scalar-path phi)."""
    from conav.intent import phi_residual

    sc = load_builtin("console_smoke")
    cfg = NmpcConfig(horizon=10)
    sol = solve(sc.start, THETA, sc, cfg)
    assert sol.max_constraint_violation <= 1e-4
    dyn = DynamicsConfig(ts=cfg.ts)
    for k in range(cfg.horizon):
        phi = phi_residual(
            RobotState.from_array(sol.states[k]),
            VelocityCommand.from_array(sol.human_inputs[k]),
            THETA,
            sc.goal,
            sc.obstacles,
            dyn,
        )
        assert np.abs(phi).max() < 2e-4, f"knot {k}: phi = {phi}"


def test_solver_failure_falls_back_to_shifted_plan():
    from conav.nmpc import NmpcSolver
    from conav.errors import SolverFailure
    import conav.nmpc.sqp as sqp_mod

    sc = load_builtin("console_smoke")
    cfg = NmpcConfig(horizon=6)
    solver = NmpcSolver(cfg)
    sol0, fb0 = solver.solve_tick(sc.start, THETA, sc)
    assert not fb0

    real_solve = sqp_mod.solve
    try:
        def boom(*a, **k):
            raise SolverFailure("forced breakdown")

        sqp_mod.solve = boom
        x1 = RobotState.from_array(sol0.states[1])
        sol1, fb1 = solver.solve_tick(x1, THETA, sc)
        assert fb1
        np.testing.assert_array_equal(sol1.states[0], x1.as_array())
        np.testing.assert_array_equal(sol1.robot_inputs[0], sol0.robot_inputs[1])
    finally:
        sqp_mod.solve = real_solve
