"""Backend equivalence: the compiled kernels must reproduce the numpy ones.

Every public output (residuals, jacobians, band assembly, operator matvecs)
is compared between the two implementations on randomized iterates.  Skipped
entirely when the extension is not built.
"""

import numpy as np
import pytest

import conav.kernels as kernels
from conav.kernels import LDAB, numpy_backend

compiled = pytest.importorskip("conav.kernels._speedups")


def make_pair(n, n_obs, locked=(False, False), seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.5, 5.0, size=(n_obs, 2)) if n_obs else np.empty((0, 2))
    ref = np.tile(np.array([4.0, 2.0, 0.3]), (n + 1, 1))
    args = (
        n,
        0.1,
        0.35,
        0.1,
        0.5,
        np.array([0.4, 0.7, 5.0, 2.0, 2.0]),
        np.array([4.0, 2.0, 0.3]),
        centers,
        ref,
        (4.0, 4.0, 4.0),
        (40.0, 40.0, 40.0),
        (0.4, 0.2),
        (0.02, 0.02),
        1.0e3,
    )
    return (
        numpy_backend.HorizonKernels(*args, locked=locked),
        compiled.HorizonKernels(*args, locked=locked),
        rng,
    )


def random_point(n, rng):
    xs = rng.uniform(-1.0, 6.0, size=(n + 1, 3))
    ur = rng.uniform(-0.4, 0.4, size=(n, 2))
    uh = rng.uniform(-0.8, 0.8, size=(n, 2))
    dl = rng.uniform(-0.2, 0.2, size=n)
    return xs, ur, uh, dl


CASES = [(1, 0), (1, 2), (5, 0), (5, 3), (25, 10), (100, 10)]


@pytest.mark.parametrize("n,n_obs", CASES)
def test_structural_attributes_match(n, n_obs):
    ref, fast, _ = make_pair(n, n_obs)
    for name in ("n_prim", "n_kkt", "m_eq", "m_cbf", "m_box", "m_in",
                 "off_ur", "off_uh", "off_dl"):
        assert getattr(ref, name) == getattr(fast, name), name
    np.testing.assert_array_equal(ref.prim2kkt, fast.prim2kkt)
    np.testing.assert_array_equal(ref.eq2kkt, fast.eq2kkt)
    np.testing.assert_allclose(ref.h_prim, fast.h_prim, rtol=0, atol=0)
    np.testing.assert_array_equal(ref.lock_rows, fast.lock_rows)


@pytest.mark.parametrize("n,n_obs", CASES)
def test_residuals_match(n, n_obs):
    ref, fast, rng = make_pair(n, n_obs, seed=n + n_obs)
    for _ in range(3):
        xs, ur, uh, dl = random_point(n, rng)
        ca, da, sa, ba, ma = ref.residuals(xs, ur, uh, dl)
        cb, db, sb, bb, mb = fast.residuals(xs, ur, uh, dl)
        assert ca == pytest.approx(cb, rel=1e-13, abs=1e-12)
        np.testing.assert_allclose(da, db, atol=1e-14)
        np.testing.assert_allclose(sa, sb, atol=1e-12)
        np.testing.assert_allclose(ba, bb, atol=1e-14)
        if np.isfinite(ma) or np.isfinite(mb):
            assert ma == pytest.approx(mb, rel=1e-13)
        assert da.shape == db.shape and ba.shape == bb.shape


@pytest.mark.parametrize("n,n_obs", CASES)
def test_jacobians_match(n, n_obs):
    ref, fast, rng = make_pair(n, n_obs, seed=2 * n + n_obs)
    xs, ur, uh, dl = random_point(n, rng)
    ja = ref.jacobians(xs, ur, uh, dl)
    jb = fast.jacobians(xs, ur, uh, dl)
    assert set(ja) == set(jb)
    for key in ja:
        np.testing.assert_allclose(ja[key], jb[key], atol=1e-12, err_msg=key)
        assert ja[key].shape == jb[key].shape, key


@pytest.mark.parametrize("n,n_obs", CASES)
@pytest.mark.parametrize("locked", [(False, False), (False, True)])
def test_band_assembly_matches(n, n_obs, locked):
    ref, fast, rng = make_pair(n, n_obs, locked=locked, seed=3 * n + n_obs)
    xs, ur, uh, dl = random_point(n, rng)
    ja = ref.jacobians(xs, ur, uh, dl)
    jb = fast.jacobians(xs, ur, uh, dl)
    band_a = ref.base_band(ja).copy()
    band_b = fast.base_band(jb).copy()
    assert band_a.shape == band_b.shape == (LDAB, ref.n_kkt)
    np.testing.assert_allclose(band_a, band_b, atol=1e-12)

    sigma_cbf = rng.uniform(0.1, 5.0, size=(n, n_obs)) if n_obs else None
    sigma_box = rng.uniform(0.0, 3.0, size=(n, 2))
    if locked[1]:
        sigma_box[:, 1] = 0.0
    ref.add_sigma(band_a, ja, sigma_cbf, sigma_box)
    fast.add_sigma(band_b, jb, sigma_cbf, sigma_box)
    np.testing.assert_allclose(band_a, band_b, atol=1e-12)


@pytest.mark.parametrize("n,n_obs", CASES)
@pytest.mark.parametrize("locked", [(False, False), (False, True)])
def test_operator_matvecs_match(n, n_obs, locked):
    ref, fast, rng = make_pair(n, n_obs, locked=locked, seed=5 * n + n_obs)
    xs, ur, uh, dl = random_point(n, rng)
    ja = ref.jacobians(xs, ur, uh, dl)
    jb = fast.jacobians(xs, ur, uh, dl)
    for _ in range(3):
        dz = rng.standard_normal(ref.n_prim)
        y = rng.standard_normal(ref.m_eq)
        np.testing.assert_allclose(
            ref.eq_matvec(ja, dz), fast.eq_matvec(jb, dz), atol=1e-12
        )
        np.testing.assert_allclose(
            ref.eq_rmatvec(ja, y), fast.eq_rmatvec(jb, y), atol=1e-12
        )
        if ref.m_in:
            w = rng.standard_normal(ref.m_in)
            np.testing.assert_allclose(
                ref.ineq_matvec(ja, dz), fast.ineq_matvec(jb, dz), atol=1e-12
            )
            np.testing.assert_allclose(
                ref.ineq_rmatvec(ja, w), fast.ineq_rmatvec(jb, w), atol=1e-12
            )


def test_step_fraction_matches():
    rng = np.random.default_rng(11)
    for _ in range(50):
        v = rng.uniform(0.01, 2.0, size=40)
        dv = rng.standard_normal(40)
        a = numpy_backend.step_fraction(v, dv)
        b = compiled.step_fraction(v, dv)
        if np.isinf(a):
            assert np.isinf(b)
        else:
            assert a == pytest.approx(b, rel=1e-15)
    assert np.isinf(compiled.step_fraction(np.ones(3), np.ones(3)))


def test_dispatcher_reports_compiled():
    assert "compiled" in kernels.available_backends()
    assert kernels.backend_name() in ("numpy", "compiled")
    assert kernels.get_kernels_class() is not None
