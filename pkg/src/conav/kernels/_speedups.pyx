# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled horizon kernels: a drop-in twin of ``numpy_backend``.

Same class name, same constructor, same outputs; the hot loops are plain C
loops over stages and obstacles instead of vectorized scatters.  The band
layout facts (KL/KU/LDAB/STAGE) are duplicated here on purpose so the module
stands alone; the dispatcher asserts both backends agree.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, M_PI, cos, fmod, sin, sqrt

cnp.import_array()

KL = 14
KU = 14
LDAB = 2 * 14 + 14 + 1
STAGE = 13

cdef int _KL = 14
cdef int _KU = 14
cdef int _STAGE = 13
cdef double _TWO_PI = 2.0 * M_PI
cdef double _SQRT_GUARD = 1.0e-12


cdef inline double _wrap(double a) nogil:
    cdef double r = fmod(M_PI - a, _TWO_PI)
    if r < 0.0:
        r += _TWO_PI
    return M_PI - r


def step_fraction(v, dv):
    """Largest t with v + t*dv >= 0 (inf when dv never decreases v)."""
    cdef double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef double[::1] dd = np.ascontiguousarray(dv, dtype=np.float64)
    cdef Py_ssize_t i, n = vv.shape[0]
    cdef double t = INFINITY, r
    for i in range(n):
        if dd[i] < 0.0:
            r = -vv[i] / dd[i]
            if r < t:
                t = r
    return t


cdef class HorizonKernels:
    """Per-solve computation engine bound to one (scenario, config, theta)."""

    cdef readonly int N, n_obs, n_prim, n_kkt, m_eq, m_cbf, m_box, m_in
    cdef readonly int off_x, off_ur, off_uh, off_dl
    cdef readonly double ts, lam, gamma, d_th, w_slack
    cdef readonly object theta, goal, centers, ref, qr, pr, rr, rh
    cdef readonly object locked, box_active
    cdef readonly object prim2kkt, eq2kkt, h_prim, lock_rows
    cdef object _kkt_diag, _band
    cdef double[::1] _theta, _goal, _qr, _pr, _rr, _rh
    cdef double[:, ::1] _centers, _ref
    cdef double[::1] _kkt_diag_v
    cdef long long[::1] _lock_rows_v

    def __init__(
        self,
        n_steps,
        ts,
        lam,
        gamma,
        d_th,
        theta,
        goal,
        centers,
        ref,
        state_weights,
        terminal_weights,
        robot_input_weights,
        human_input_weights,
        slack_weight,
        locked=(False, False),
    ):
        self.N = int(n_steps)
        cdef int N = self.N
        self.centers = np.ascontiguousarray(
            np.asarray(centers, dtype=np.float64).reshape(-1, 2)
        )
        self.n_obs = self.centers.shape[0]
        self.ts = float(ts)
        self.lam = float(lam)
        self.gamma = float(gamma)
        self.d_th = float(d_th)
        self.theta = np.ascontiguousarray(theta, dtype=np.float64).copy()
        self.goal = np.ascontiguousarray(goal, dtype=np.float64).copy()
        self.ref = np.ascontiguousarray(ref, dtype=np.float64).copy()
        self.qr = np.ascontiguousarray(state_weights, dtype=np.float64)
        self.pr = np.ascontiguousarray(terminal_weights, dtype=np.float64)
        self.rr = np.ascontiguousarray(robot_input_weights, dtype=np.float64)
        self.rh = np.ascontiguousarray(human_input_weights, dtype=np.float64)
        self.w_slack = float(slack_weight)
        self.locked = (bool(locked[0]), bool(locked[1]))
        self._theta = self.theta
        self._goal = self.goal
        self._centers = self.centers
        self._ref = self.ref
        self._qr = self.qr
        self._pr = self.pr
        self._rr = self.rr
        self._rh = self.rh

        self.n_prim = 8 * N + 3
        self.n_kkt = _STAGE * N + 6
        self.m_eq = 5 * N + 3
        self.box_active = (not self.locked[0], not self.locked[1])
        self.m_cbf = N * self.n_obs
        self.m_box = 2 * N * (int(self.box_active[0]) + int(self.box_active[1]))
        self.m_in = self.m_cbf + self.m_box

        self.off_x = 0
        self.off_ur = 3 * (N + 1)
        self.off_uh = self.off_ur + 2 * N
        self.off_dl = self.off_uh + 2 * N

        p2k = np.empty(self.n_prim, dtype=np.int64)
        e2k = np.empty(self.m_eq, dtype=np.int64)
        cdef long long[::1] p2kv = p2k
        cdef long long[::1] e2kv = e2k
        cdef int k, i, sb
        for k in range(N):
            sb = 3 + _STAGE * k
            for i in range(3):
                p2kv[3 * k + i] = sb + i
            for i in range(2):
                p2kv[self.off_ur + 2 * k + i] = sb + 3 + i
                p2kv[self.off_uh + 2 * k + i] = sb + 5 + i
            p2kv[self.off_dl + k] = sb + 7
            for i in range(3):
                e2kv[3 + 3 * k + i] = sb + 10 + i
            for i in range(2):
                e2kv[3 + 3 * N + 2 * k + i] = sb + 8 + i
        for i in range(3):
            p2kv[3 * N + i] = 3 + _STAGE * N + i
            e2kv[i] = i
        self.prim2kkt = p2k
        self.eq2kkt = e2k

        hdiag = np.zeros(self.n_kkt)
        cdef double[::1] hv = hdiag
        for k in range(N):
            sb = 3 + _STAGE * k
            for i in range(3):
                hv[sb + i] = 2.0 * self._qr[i]
            for i in range(2):
                hv[sb + 3 + i] = 2.0 * self._rr[i]
                hv[sb + 5 + i] = 2.0 * self._rh[i]
            hv[sb + 7] = 2.0 * self.w_slack
        for i in range(3):
            hv[3 + _STAGE * N + i] = 2.0 * self._pr[i]
        self.h_prim = hdiag[p2k].copy()
        hdiag[e2k] = -1.0e-11
        self._kkt_diag = hdiag
        self._kkt_diag_v = hdiag

        lock_rows = []
        for comp in range(2):
            if self.locked[comp]:
                lock_rows.extend(
                    (3 + _STAGE * np.arange(N, dtype=np.int64) + 3 + comp).tolist()
                )
        self.lock_rows = np.asarray(sorted(lock_rows), dtype=np.int64)
        self._lock_rows_v = self.lock_rows
        self._band = np.zeros((LDAB, self.n_kkt))

    # ----- evaluation -----------------------------------------------------

    def residuals(self, xs, ur, uh, dl):
        """Constraint residuals, objective value, and the squared distance of
        the closest predicted position to any obstacle center.  Returns
        ``(cost, c_dyn, c_stat, c_cbf, min_d2)``."""
        cdef double[:, ::1] x = np.ascontiguousarray(xs, dtype=np.float64)
        cdef double[:, ::1] r = np.ascontiguousarray(ur, dtype=np.float64)
        cdef double[:, ::1] u = np.ascontiguousarray(uh, dtype=np.float64)
        cdef double[::1] d = np.ascontiguousarray(dl, dtype=np.float64)
        cdef int N = self.N, nO = self.n_obs
        cdef double T = self.ts, lm = self.lam

        c_dyn = np.empty((N, 3))
        c_stat = np.empty((N, 2))
        c_cbf = np.empty((N, nO))
        cdef double[:, ::1] cd = c_dyn
        cdef double[:, ::1] cs = c_stat
        cdef double[:, ::1] cc = c_cbf

        cdef double min_d2 = INFINITY
        cdef double ck, sk, ubv, px, py, pyaw, e1, e2, e3
        cdef double phi_v, phi_w, r1, r2, q_raw, q, u_r
        cdef double th0 = self._theta[0], th1 = self._theta[1]
        cdef double th2 = self._theta[2], th3 = self._theta[3], th4 = self._theta[4]
        cdef double gx = self._goal[0], gy = self._goal[1], gyaw = self._goal[2]
        cdef int k, l
        for k in range(N):
            ck = cos(x[k, 2])
            sk = sin(x[k, 2])
            ubv = lm * r[k, 0] + (1.0 - lm) * u[k, 0]
            cd[k, 0] = x[k, 0] + T * ubv * ck - x[k + 1, 0]
            cd[k, 1] = x[k, 1] + T * ubv * sk - x[k + 1, 1]
            cd[k, 2] = x[k, 2] + T * (lm * r[k, 1] + (1.0 - lm) * u[k, 1]) - x[k + 1, 2]

            px = x[k, 0] + T * u[k, 0] * ck
            py = x[k, 1] + T * u[k, 0] * sk
            pyaw = x[k, 2] + T * u[k, 1]
            e1 = px - gx
            e2 = py - gy
            e3 = _wrap(pyaw - gyaw)
            phi_v = 2.0 * T * (ck * th0 * e1 + sk * th1 * e2) + 2.0 * th3 * u[k, 0]
            phi_w = 2.0 * T * th2 * e3 + 2.0 * th3 * u[k, 1]
            for l in range(nO):
                r1 = px - self._centers[l, 0]
                r2 = py - self._centers[l, 1]
                q_raw = r1 * r1 + r2 * r2
                if q_raw < min_d2:
                    min_d2 = q_raw
                q = q_raw if q_raw > _SQRT_GUARD else _SQRT_GUARD
                u_r = ck * r1 + sk * r2
                phi_v -= 2.0 * th4 * T * u_r / q
            cs[k, 0] = phi_v
            cs[k, 1] = phi_w

        cdef double hk, hk1, d1, d2, knot_d2
        if nO:
            for l in range(nO):
                d1 = x[0, 0] - self._centers[l, 0]
                d2 = x[0, 1] - self._centers[l, 1]
                knot_d2 = d1 * d1 + d2 * d2
                if knot_d2 < min_d2:
                    min_d2 = knot_d2
                hk = sqrt(knot_d2 + _SQRT_GUARD) - self.d_th
                for k in range(N):
                    d1 = x[k + 1, 0] - self._centers[l, 0]
                    d2 = x[k + 1, 1] - self._centers[l, 1]
                    knot_d2 = d1 * d1 + d2 * d2
                    if knot_d2 < min_d2:
                        min_d2 = knot_d2
                    hk1 = sqrt(knot_d2 + _SQRT_GUARD) - self.d_th
                    cc[k, l] = hk1 - (1.0 - self.gamma) * hk - d[k]
                    hk = hk1

        cdef double cost = 0.0, ew
        for k in range(N):
            e1 = x[k, 0] - self._ref[k, 0]
            e2 = x[k, 1] - self._ref[k, 1]
            ew = _wrap(x[k, 2] - self._ref[k, 2])
            cost += self._qr[0] * e1 * e1 + self._qr[1] * e2 * e2 + self._qr[2] * ew * ew
            cost += self._rr[0] * r[k, 0] * r[k, 0] + self._rr[1] * r[k, 1] * r[k, 1]
            cost += self._rh[0] * u[k, 0] * u[k, 0] + self._rh[1] * u[k, 1] * u[k, 1]
            cost += self.w_slack * d[k] * d[k]
        e1 = x[N, 0] - self._ref[N, 0]
        e2 = x[N, 1] - self._ref[N, 1]
        ew = _wrap(x[N, 2] - self._ref[N, 2])
        cost += self._pr[0] * e1 * e1 + self._pr[1] * e2 * e2 + self._pr[2] * ew * ew
        return cost, c_dyn, c_stat, c_cbf, min_d2

    def jacobians(self, xs, ur, uh, dl):
        """Linearization blocks at the current iterate (same dict as the
        numpy backend)."""
        cdef double[:, ::1] x = np.ascontiguousarray(xs, dtype=np.float64)
        cdef double[:, ::1] r = np.ascontiguousarray(ur, dtype=np.float64)
        cdef double[:, ::1] u = np.ascontiguousarray(uh, dtype=np.float64)
        cdef double[::1] d = np.ascontiguousarray(dl, dtype=np.float64)
        cdef int N = self.N, nO = self.n_obs
        cdef double T = self.ts, lm = self.lam

        A = np.zeros((N, 3, 3))
        BR = np.zeros((N, 3, 2))
        BH = np.zeros((N, 3, 2))
        Px = np.zeros((N, 2, 3))
        Pu = np.zeros((N, 2, 2))
        h = np.zeros((N + 1, nO))
        Gh = np.zeros((N + 1, nO, 2))
        grad = np.empty(self.n_prim)
        cdef double[:, :, ::1] Av = A
        cdef double[:, :, ::1] BRv = BR
        cdef double[:, :, ::1] BHv = BH
        cdef double[:, :, ::1] Pxv = Px
        cdef double[:, :, ::1] Puv = Pu
        cdef double[:, ::1] hv = h
        cdef double[:, :, ::1] Ghv = Gh
        cdef double[::1] gv = grad

        cdef double th0 = self._theta[0], th1 = self._theta[1]
        cdef double th2 = self._theta[2], th3 = self._theta[3], th4 = self._theta[4]
        cdef double c3 = 2.0 * th4 * T
        cdef double ck, sk, ubv, px, py, e1, e2
        cdef double r1, r2, q, u_r, u_p, qq, root
        cdef int k, l
        for k in range(N):
            ck = cos(x[k, 2])
            sk = sin(x[k, 2])
            ubv = lm * r[k, 0] + (1.0 - lm) * u[k, 0]
            Av[k, 0, 0] = 1.0
            Av[k, 1, 1] = 1.0
            Av[k, 2, 2] = 1.0
            Av[k, 0, 2] = -T * ubv * sk
            Av[k, 1, 2] = T * ubv * ck
            BRv[k, 0, 0] = lm * T * ck
            BRv[k, 1, 0] = lm * T * sk
            BRv[k, 2, 1] = lm * T
            BHv[k, 0, 0] = (1.0 - lm) * T * ck
            BHv[k, 1, 0] = (1.0 - lm) * T * sk
            BHv[k, 2, 1] = (1.0 - lm) * T

            px = x[k, 0] + T * u[k, 0] * ck
            py = x[k, 1] + T * u[k, 0] * sk
            e1 = px - self._goal[0]
            e2 = py - self._goal[1]
            Pxv[k, 0, 0] = 2.0 * T * ck * th0
            Pxv[k, 0, 1] = 2.0 * T * sk * th1
            Pxv[k, 0, 2] = 2.0 * T * (
                -sk * th0 * e1 + ck * th1 * e2
                + T * u[k, 0] * ck * sk * (th1 - th0)
            )
            Pxv[k, 1, 2] = 2.0 * T * th2
            Puv[k, 0, 0] = 2.0 * T * T * (ck * ck * th0 + sk * sk * th1) + 2.0 * th3
            Puv[k, 1, 1] = 2.0 * T * T * th2 + 2.0 * th3
            for l in range(nO):
                r1 = px - self._centers[l, 0]
                r2 = py - self._centers[l, 1]
                q = r1 * r1 + r2 * r2
                if q < _SQRT_GUARD:
                    q = _SQRT_GUARD
                qq = q * q
                u_r = ck * r1 + sk * r2
                u_p = -sk * r1 + ck * r2
                Pxv[k, 0, 0] -= c3 * (ck * q - 2.0 * u_r * r1) / qq
                Pxv[k, 0, 1] -= c3 * (sk * q - 2.0 * u_r * r2) / qq
                Pxv[k, 0, 2] -= c3 * (u_p / q - 2.0 * T * u[k, 0] * u_r * u_p / qq)
                Puv[k, 0, 0] -= c3 * T * (1.0 / q - 2.0 * u_r * u_r / qq)

        for k in range(N + 1):
            for l in range(nO):
                r1 = x[k, 0] - self._centers[l, 0]
                r2 = x[k, 1] - self._centers[l, 1]
                root = sqrt(r1 * r1 + r2 * r2 + _SQRT_GUARD)
                hv[k, l] = root - self.d_th
                Ghv[k, l, 0] = r1 / root
                Ghv[k, l, 1] = r2 / root

        cdef double ew
        for k in range(N):
            gv[3 * k] = 2.0 * self._qr[0] * (x[k, 0] - self._ref[k, 0])
            gv[3 * k + 1] = 2.0 * self._qr[1] * (x[k, 1] - self._ref[k, 1])
            ew = _wrap(x[k, 2] - self._ref[k, 2])
            gv[3 * k + 2] = 2.0 * self._qr[2] * ew
            gv[self.off_ur + 2 * k] = 2.0 * self._rr[0] * r[k, 0]
            gv[self.off_ur + 2 * k + 1] = 2.0 * self._rr[1] * r[k, 1]
            gv[self.off_uh + 2 * k] = 2.0 * self._rh[0] * u[k, 0]
            gv[self.off_uh + 2 * k + 1] = 2.0 * self._rh[1] * u[k, 1]
            gv[self.off_dl + k] = 2.0 * self.w_slack * d[k]
        gv[3 * N] = 2.0 * self._pr[0] * (x[N, 0] - self._ref[N, 0])
        gv[3 * N + 1] = 2.0 * self._pr[1] * (x[N, 1] - self._ref[N, 1])
        ew = _wrap(x[N, 2] - self._ref[N, 2])
        gv[3 * N + 2] = 2.0 * self._pr[2] * ew
        return {
            "A": A, "BR": BR, "BH": BH, "Px": Px, "Pu": Pu,
            "h": h, "Gh": Gh, "grad": grad,
        }

    # ----- band assembly ---------------------------------------------------

    def base_band(self, jac):
        """(Re)build the KKT band for the current linearization, without the
        barrier/bound curvature terms.  Returns the internal buffer."""
        band = self._band
        band.fill(0.0)
        cdef double[:, ::1] b = band
        cdef double[:, :, ::1] Av = jac["A"]
        cdef double[:, :, ::1] BRv = jac["BR"]
        cdef double[:, :, ::1] BHv = jac["BH"]
        cdef double[:, :, ::1] Pxv = jac["Px"]
        cdef double[:, :, ::1] Puv = jac["Pu"]
        cdef int N = self.N, n_kkt = self.n_kkt
        cdef int k, i, j, sb, row, col, kk = _KL + _KU

        for i in range(n_kkt):
            b[kk, i] = self._kkt_diag_v[i]
        for i in range(3):
            b[kk + i - (3 + i), 3 + i] = 1.0   # (pi_i, x0_i)
            b[kk + (3 + i) - i, i] = 1.0       # mirror
        for k in range(N):
            sb = 3 + _STAGE * k
            for i in range(2):
                for j in range(3):
                    row = sb + 8 + i
                    col = sb + j
                    b[kk + row - col, col] = Pxv[k, i, j]
                    b[kk + col - row, row] = Pxv[k, i, j]
                for j in range(2):
                    row = sb + 8 + i
                    col = sb + 5 + j
                    b[kk + row - col, col] = Puv[k, i, j]
                    b[kk + col - row, row] = Puv[k, i, j]
            for i in range(3):
                row = sb + 10 + i
                for j in range(3):
                    col = sb + j
                    b[kk + row - col, col] = Av[k, i, j]
                    b[kk + col - row, row] = Av[k, i, j]
                for j in range(2):
                    col = sb + 3 + j
                    b[kk + row - col, col] = BRv[k, i, j]
                    b[kk + col - row, row] = BRv[k, i, j]
                    col = sb + 5 + j
                    b[kk + row - col, col] = BHv[k, i, j]
                    b[kk + col - row, row] = BHv[k, i, j]
                col = sb + _STAGE + i
                b[kk + row - col, col] = -1.0
                b[kk + col - row, row] = -1.0

        cdef int nlock = self._lock_rows_v.shape[0], lo, hi
        for i in range(nlock):
            row = <int> self._lock_rows_v[i]
            lo = row - _KL if row - _KL > 0 else 0
            hi = row + _KU if row + _KU < n_kkt - 1 else n_kkt - 1
            for col in range(lo, hi + 1):
                b[kk + row - col, col] = 0.0
            b[kk, row] = 1.0
        return band

    def add_sigma(self, band, jac, sigma_cbf, sigma_box):
        """Add G' diag(sigma) G for the active inequalities (same contract
        as the numpy backend)."""
        cdef double[:, ::1] b = band
        cdef double[:, :, ::1] Ghv
        cdef double[:, ::1] sc
        cdef double[:, ::1] sbx
        cdef int N = self.N, nO = self.n_obs
        cdef int k, l, i, j, sb, sb1, row, col, kk = _KL + _KU
        cdef double s, a0, a1, c0, c1, om = 1.0 - self.gamma
        cdef double ai[2]
        cdef double ci[2]
        if nO and sigma_cbf is not None:
            Ghv = jac["Gh"]
            sc = np.ascontiguousarray(sigma_cbf, dtype=np.float64)
            for k in range(N):
                sb = 3 + _STAGE * k
                sb1 = sb + _STAGE
                for l in range(nO):
                    s = sc[k, l]
                    ai[0] = -om * Ghv[k, l, 0]
                    ai[1] = -om * Ghv[k, l, 1]
                    ci[0] = Ghv[k + 1, l, 0]
                    ci[1] = Ghv[k + 1, l, 1]
                    for i in range(2):
                        for j in range(2):
                            b[kk + i - j, sb + j] += s * ai[i] * ai[j]
                            b[kk + i - j, sb1 + j] += s * ci[i] * ci[j]
                            row = sb + i
                            col = sb1 + j
                            b[kk + row - col, col] += s * ai[i] * ci[j]
                            b[kk + col - row, row] += s * ai[i] * ci[j]
                        row = sb + i
                        col = sb + 7
                        b[kk + row - col, col] += -s * ai[i]
                        b[kk + col - row, row] += -s * ai[i]
                        row = sb1 + i
                        b[kk + row - col, col] += -s * ci[i]
                        b[kk + col - row, row] += -s * ci[i]
                    b[kk, sb + 7] += s
        if sigma_box is not None:
            sbx = np.ascontiguousarray(sigma_box, dtype=np.float64)
            for k in range(N):
                sb = 3 + _STAGE * k
                b[kk, sb + 3] += sbx[k, 0]
                b[kk, sb + 4] += sbx[k, 1]

    # ----- constraint-Jacobian operators ------------------------------------

    def eq_matvec(self, jac, dz):
        cdef double[::1] z = np.ascontiguousarray(dz, dtype=np.float64)
        cdef double[:, :, ::1] Av = jac["A"]
        cdef double[:, :, ::1] BRv = jac["BR"]
        cdef double[:, :, ::1] BHv = jac["BH"]
        cdef double[:, :, ::1] Pxv = jac["Px"]
        cdef double[:, :, ::1] Puv = jac["Pu"]
        out = np.empty(self.m_eq)
        cdef double[::1] o = out
        cdef int N = self.N, our = self.off_ur, ouh = self.off_uh
        cdef int k, i, j
        cdef double acc
        for i in range(3):
            o[i] = z[i]
        for k in range(N):
            for i in range(3):
                acc = -z[3 * (k + 1) + i]
                for j in range(3):
                    acc += Av[k, i, j] * z[3 * k + j]
                for j in range(2):
                    acc += BRv[k, i, j] * z[our + 2 * k + j]
                    acc += BHv[k, i, j] * z[ouh + 2 * k + j]
                o[3 + 3 * k + i] = acc
            for i in range(2):
                acc = 0.0
                for j in range(3):
                    acc += Pxv[k, i, j] * z[3 * k + j]
                for j in range(2):
                    acc += Puv[k, i, j] * z[ouh + 2 * k + j]
                o[3 + 3 * N + 2 * k + i] = acc
        return out

    def eq_rmatvec(self, jac, y):
        cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
        cdef double[:, :, ::1] Av = jac["A"]
        cdef double[:, :, ::1] BRv = jac["BR"]
        cdef double[:, :, ::1] BHv = jac["BH"]
        cdef double[:, :, ::1] Pxv = jac["Px"]
        cdef double[:, :, ::1] Puv = jac["Pu"]
        out = np.zeros(self.n_prim)
        cdef double[::1] o = out
        cdef int N = self.N, our = self.off_ur, ouh = self.off_uh
        cdef int k, i, j
        for i in range(3):
            o[i] += yv[i]
        for k in range(N):
            for i in range(3):
                for j in range(3):
                    o[3 * k + j] += Av[k, i, j] * yv[3 + 3 * k + i]
                o[3 * (k + 1) + i] -= yv[3 + 3 * k + i]
                for j in range(2):
                    o[our + 2 * k + j] += BRv[k, i, j] * yv[3 + 3 * k + i]
                    o[ouh + 2 * k + j] += BHv[k, i, j] * yv[3 + 3 * k + i]
            for i in range(2):
                for j in range(3):
                    o[3 * k + j] += Pxv[k, i, j] * yv[3 + 3 * N + 2 * k + i]
                for j in range(2):
                    o[ouh + 2 * k + j] += Puv[k, i, j] * yv[3 + 3 * N + 2 * k + i]
        return out

    def ineq_matvec(self, jac, dz):
        cdef double[::1] z = np.ascontiguousarray(dz, dtype=np.float64)
        cdef double[:, :, ::1] Ghv
        out = np.empty(self.m_in)
        cdef double[::1] o = out
        cdef int N = self.N, nO = self.n_obs, odl = self.off_dl, our = self.off_ur
        cdef int k, l, pos = 0
        cdef double om = 1.0 - self.gamma, acc
        if self.m_cbf:
            Ghv = jac["Gh"]
            for k in range(N):
                for l in range(nO):
                    acc = -z[odl + k]
                    acc -= om * (
                        Ghv[k, l, 0] * z[3 * k] + Ghv[k, l, 1] * z[3 * k + 1]
                    )
                    acc += (
                        Ghv[k + 1, l, 0] * z[3 * (k + 1)]
                        + Ghv[k + 1, l, 1] * z[3 * (k + 1) + 1]
                    )
                    o[k * nO + l] = acc
            pos = self.m_cbf
        if self.box_active[0]:
            for k in range(N):
                o[pos + k] = -z[our + 2 * k]
                o[pos + N + k] = z[our + 2 * k]
            pos += 2 * N
        if self.box_active[1]:
            for k in range(N):
                o[pos + k] = -z[our + 2 * k + 1]
                o[pos + N + k] = z[our + 2 * k + 1]
        return out

    def ineq_rmatvec(self, jac, w):
        cdef double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
        cdef double[:, :, ::1] Ghv
        out = np.zeros(self.n_prim)
        cdef double[::1] o = out
        cdef int N = self.N, nO = self.n_obs, odl = self.off_dl, our = self.off_ur
        cdef int k, l, pos = 0
        cdef double om = 1.0 - self.gamma, wl
        if self.m_cbf:
            Ghv = jac["Gh"]
            for k in range(N):
                for l in range(nO):
                    wl = wv[k * nO + l]
                    o[3 * k] -= om * Ghv[k, l, 0] * wl
                    o[3 * k + 1] -= om * Ghv[k, l, 1] * wl
                    o[3 * (k + 1)] += Ghv[k + 1, l, 0] * wl
                    o[3 * (k + 1) + 1] += Ghv[k + 1, l, 1] * wl
                    o[odl + k] -= wl
            pos = self.m_cbf
        if self.box_active[0]:
            for k in range(N):
                o[our + 2 * k] += -wv[pos + k] + wv[pos + N + k]
            pos += 2 * N
        if self.box_active[1]:
            for k in range(N):
                o[our + 2 * k + 1] += -wv[pos + k] + wv[pos + N + k]
        return out
