"""QP step computation: predictor-corrector interior point on the banded KKT.

One SQP iteration hands this module a linearization (Jacobian blocks, cost
gradient, constraint values) through the Transcription object.  The reduced
KKT system

    [ H + G' diag(sigma) G   E' ] [ dz ]   [ rhs1 ]
    [ E                     -eI ] [ -dy ] = [ rhs2 ]

is factorized with LAPACK's banded LU (dgbtrf/dgbtrs); sigma = lambda / s is
refreshed every interior-point iteration, so each iteration costs one band
factorization plus two solves (predictor and corrector).
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.linalg import lapack

from .. import kernels
from ..errors import SolverFailure
from ..kernels import KL, KU

_MAX_IP_ITERS = 100
_STEP_SCALE = 0.995   # fraction-to-the-boundary for s and lambda
_FACTOR_RETRIES = 3
# soft exits: after `gate` iterations an iterate within `factor * tol`
# of the scaled KKT target is accepted instead of grinding further
_SOFT_TIERS = ((12, 10.0), (30, 100.0))


@dataclasses.dataclass
class QpResult:
    dz: np.ndarray
    y_eq: np.ndarray
    lam: np.ndarray
    iterations: int
    mu: float
    converged: bool
    # solves [KKT] d = (0, -c_eq_new) with the final factorization; used by
    # the SQP for a second-order correction after a rejected full step
    correction: object = dataclasses.field(default=None, repr=False)


class _Factorization:
    def __init__(self, band: np.ndarray, n_kkt: int):
        lu, ipiv, info = lapack.dgbtrf(band, KL, KU, overwrite_ab=1)
        if info != 0:
            raise ArithmeticError(f"banded LU breakdown (info={info})")
        self._lu = lu
        self._ipiv = ipiv
        self._n = n_kkt

    def solve(self, rhs_kkt: np.ndarray) -> np.ndarray:
        x, info = lapack.dgbtrs(self._lu, KL, KU, rhs_kkt.reshape(-1, 1), self._ipiv)
        if info != 0:
            raise ArithmeticError(f"banded solve failed (info={info})")
        return x[:, 0]


def _factor_with_retries(tr, jac, sigma, damp=0.0):
    """Factor the KKT band, bumping the diagonal regularization if the LU
    hits a zero pivot (can happen when a stationarity row degenerates)."""
    reg = 0.0
    for attempt in range(_FACTOR_RETRIES + 1):
        band = tr.kern.base_band(jac).copy()
        if tr.m_in and sigma is not None:
            sig_cbf, sig_box, sig_dlo = tr.sigma_split(sigma)
            tr.kern.add_sigma(band, jac, sig_cbf, sig_box)
            if sig_dlo is not None:
                # slack floor rows have identity Jacobian on the slack
                # slots, so their G' sigma G lands on the diagonal
                band[KL + KU, tr.prim2kkt[tr.off_dl :]] += sig_dlo
        if damp:
            band[KL + KU, tr.prim2kkt] += damp
        if reg:
            band[KL + KU, tr.prim2kkt] += reg
            band[KL + KU, tr.eq2kkt] -= reg
        try:
            return _Factorization(band, tr.n_kkt)
        except ArithmeticError:
            reg = 1.0e-8 if reg == 0.0 else reg * 100.0
    raise SolverFailure("KKT factorization failed after regularization retries")


def solve_qp(tr, z: np.ndarray, jac, res, tol: float, damp: float = 0.0) -> QpResult:
    """Solve the local QP; returns the primal step and multipliers.

    ``tr`` is the Transcription, ``z`` the current iterate, ``jac`` the
    linearization at ``z``, ``res`` the residual dict at the same point.
    ``damp`` adds a proximal term (damped Gauss-Newton) that shrinks the
    step when the caller has learned the quadratic model is only locally
    valid.  Raises SolverFailure on numerical breakdown.
    """
    n, m = tr.n_prim, tr.m_in
    g = jac["grad"]
    hprim = tr.kern.h_prim + damp if damp else tr.kern.h_prim
    c_eq = tr.eq_vector(res)
    c_in = tr.ineq_vector(res)
    lock_idx, lock_target = tr.lock_targets(z)
    lock_kkt = tr.kern.lock_rows

    dz = np.zeros(n)
    if len(lock_idx):
        dz[lock_idx] = lock_target
    y = np.zeros(tr.m_eq)

    scale_d = 1.0 + float(np.abs(g).max(initial=0.0))
    scale_p = 1.0 + float(np.abs(c_eq).max(initial=0.0))
    if m:
        scale_p = max(scale_p, 1.0 + float(np.abs(c_in).max(initial=0.0)))

    def kkt_solve(fact, rhs_prim, rhs_eq):
        b = np.zeros(tr.n_kkt)
        b[tr.prim2kkt] = rhs_prim
        b[tr.eq2kkt] = rhs_eq
        if len(lock_kkt):
            b[lock_kkt] = 0.0
        sol = fact.solve(b)
        return sol[tr.prim2kkt], -sol[tr.eq2kkt]

    if m == 0:
        fact = _factor_with_retries(tr, jac, None, damp)
        for _ in range(2):  # one Newton solve plus one refinement pass
            r_d = hprim * dz + g - tr.eq_rmatvec(jac, y)
            if len(lock_idx):
                r_d[lock_idx] = 0.0
            r_p = tr.eq_matvec(jac, dz) + c_eq
            if max(np.abs(r_d).max(initial=0.0), np.abs(r_p).max(initial=0.0)) <= tol * scale_d:
                break
            ddz, ddy = kkt_solve(fact, -r_d, -r_p)
            dz += ddz
            y += ddy
        if not np.all(np.isfinite(dz)):
            raise SolverFailure("equality QP produced non-finite step")

        def correction(c_eq_new: np.ndarray) -> np.ndarray:
            d, _ = kkt_solve(fact, np.zeros(n), -c_eq_new)
            return d

        return QpResult(dz, y, np.empty(0), 1, 0.0, True, correction)

    xi0 = tr.ineq_matvec(jac, dz) + c_in
    s = np.maximum(xi0, 0.1)
    lam = np.ones(m)
    fact = None

    mu = float(s @ lam) / m
    converged = False
    iterations = 0
    best_err = np.inf
    best_pt = None
    for iterations in range(1, _MAX_IP_ITERS + 1):
        xi = tr.ineq_matvec(jac, dz) + c_in
        r_p2 = xi - s
        r_p1 = tr.eq_matvec(jac, dz) + c_eq
        r_d = hprim * dz + g - tr.eq_rmatvec(jac, y) - tr.ineq_rmatvec(jac, lam)
        if len(lock_idx):
            r_d[lock_idx] = 0.0
        mu = float(s @ lam) / m
        err = max(
            np.abs(r_d).max(initial=0.0) / scale_d,
            np.abs(r_p1).max(initial=0.0) / scale_p,
            np.abs(r_p2).max(initial=0.0) / scale_p,
            mu / scale_d,
        )
        if err < best_err:
            best_err = err
            best_pt = (dz.copy(), y.copy(), lam.copy(), mu)
        if err <= tol:
            converged = True
            break
        if any(
            iterations > gate and best_err <= fac * tol for gate, fac in _SOFT_TIERS
        ):
            # weakly active row pairs (a barrier row and the floor of its
            # slack, both tight) have non-unique multipliers whose
            # complementarity products drain arbitrarily slowly; pushing
            # on drives s into the sigma clip, where the condensed step
            # loses the dual accuracy it had already earned.  Hand back
            # the best iterate instead of grinding the budget down.
            dz, y, lam, mu = best_pt
            converged = True
            break

        sigma_w = np.clip(lam / s, 1.0e-14, 1.0e14)
        fact = _factor_with_retries(tr, jac, sigma_w, damp)

        # predictor (affine scaling) direction
        rc = lam * s
        rhs1 = -r_d - tr.ineq_rmatvec(jac, rc / s + sigma_w * r_p2)
        dz_a, dy_a = kkt_solve(fact, rhs1, -r_p1)
        ds_a = tr.ineq_matvec(jac, dz_a) + r_p2
        dl_a = -rc / s - sigma_w * ds_a
        a_p = min(1.0, kernels.step_fraction(s, ds_a))
        a_d = min(1.0, kernels.step_fraction(lam, dl_a))
        mu_aff = float((s + a_p * ds_a) @ (lam + a_d * dl_a)) / m
        centering = np.clip((max(mu_aff, 0.0) / mu) ** 3, 0.0, 1.0) if mu > 0 else 0.0

        # corrector
        rc = lam * s + ds_a * dl_a - centering * mu
        rhs1 = -r_d - tr.ineq_rmatvec(jac, rc / s + sigma_w * r_p2)
        dz_c, dy_c = kkt_solve(fact, rhs1, -r_p1)
        ds_c = tr.ineq_matvec(jac, dz_c) + r_p2
        dl_c = -rc / s - sigma_w * ds_c

        a_p = min(1.0, _STEP_SCALE * kernels.step_fraction(s, ds_c))
        a_d = min(1.0, _STEP_SCALE * kernels.step_fraction(lam, dl_c))
        dz = dz + a_p * dz_c
        s = s + a_p * ds_c
        y = y + a_d * dy_c
        lam = lam + a_d * dl_c
        if not (np.all(np.isfinite(dz)) and np.all(np.isfinite(s)) and np.all(np.isfinite(lam))):
            raise SolverFailure("interior-point iterate became non-finite")

    if not converged and best_pt is not None:
        # the last iterate of a ground-out loop can be worse than an
        # earlier one (see the soft exit above); report the best seen
        dz, y, lam, mu = best_pt
    if not converged and mu > 1.0e-4:
        raise SolverFailure(
            f"interior point stalled (mu={mu:.3e} after {iterations} iterations)"
        )

    correction = None
    if fact is not None:
        last_fact = fact

        def correction(c_eq_new: np.ndarray) -> np.ndarray:
            d, _ = kkt_solve(last_fact, np.zeros(n), -c_eq_new)
            return d

    return QpResult(dz, y, lam, iterations, mu, converged, correction)
