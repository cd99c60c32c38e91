"""Vectorized horizon kernels: residuals, Jacobians, and banded-KKT assembly.

These are the planner's hot inner loops.  A compiled twin with the same
interface lives in ``_speedups.pyx``; the dispatcher in ``__init__`` picks
one at import time.

KKT layout (one solve has N stages): the unknowns are interleaved so the
matrix is banded with half-bandwidth 14 ::

    [ pi(3) | x_0(3) uR_0(2) uH_0(2) d_0(1) nu_0(2) mu_0(3) | x_1 ... | x_N(3) ]

``pi`` pins the first state, ``nu_k`` multiplies the stationarity rows,
``mu_k`` the dynamics defect rows.  Stage width is 13, so the KKT size is
13N + 6.  LAPACK band storage puts entry (i, j) at ``ab[KL + KU + i - j, j]``.
"""

from __future__ import annotations

import numpy as np

_TWO_PI = 2.0 * np.pi
_SQRT_GUARD = 1.0e-12  # under the square root in h; also the q clamp floor

KL = 14
KU = 14
LDAB = 2 * KL + KU + 1  # rows of the LAPACK band buffer (includes fill space)
STAGE = 13


def _wrap(a: np.ndarray) -> np.ndarray:
    return np.pi - (np.pi - a) % _TWO_PI


def step_fraction(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest t with v + t*dv >= 0 (inf when dv never decreases v)."""
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


class HorizonKernels:
    """Per-solve computation engine bound to one (scenario, config, theta).

    All methods take raw arrays: ``xs (N+1,3)``, ``ur (N,2)``, ``uh (N,2)``,
    ``dl (N,)``.  The object owns a reusable band buffer; callers that need
    to keep a band across calls must copy it.
    """

    def __init__(
        self,
        n_steps: int,
        ts: float,
        lam: float,
        gamma: float,
        d_th: float,
        theta: np.ndarray,
        goal: np.ndarray,
        centers: np.ndarray,
        ref: np.ndarray,
        state_weights,
        terminal_weights,
        robot_input_weights,
        human_input_weights,
        slack_weight: float,
        locked: tuple = (False, False),
    ):
        self.N = int(n_steps)
        self.n_obs = int(np.asarray(centers).reshape(-1, 2).shape[0])
        self.ts = float(ts)
        self.lam = float(lam)
        self.gamma = float(gamma)
        self.d_th = float(d_th)
        self.theta = np.asarray(theta, float).copy()
        self.goal = np.asarray(goal, float).copy()
        self.centers = np.asarray(centers, float).reshape(-1, 2).copy()
        self.ref = np.asarray(ref, float).copy()
        self.qr = np.asarray(state_weights, float)
        self.pr = np.asarray(terminal_weights, float)
        self.rr = np.asarray(robot_input_weights, float)
        self.rh = np.asarray(human_input_weights, float)
        self.w_slack = float(slack_weight)
        self.locked = (bool(locked[0]), bool(locked[1]))

        N = self.N
        self.n_prim = 8 * N + 3
        self.n_kkt = STAGE * N + 6
        self.m_eq = 5 * N + 3
        self.box_active = (not self.locked[0], not self.locked[1])
        self.m_cbf = N * self.n_obs
        self.m_box = 2 * N * sum(self.box_active)
        self.m_in = self.m_cbf + self.m_box

        self._build_index_maps()
        self._band = np.zeros((LDAB, self.n_kkt))

    # ----- index plumbing -------------------------------------------------

    def _stage_base(self, k):
        return 3 + STAGE * k

    def _build_index_maps(self):
        N = self.N
        base = 3 + STAGE * np.arange(N)  # (N,)

        # grouped primal vector: [x (3(N+1)), uR (2N), uH (2N), d (N)]
        self.off_x = 0
        self.off_ur = 3 * (N + 1)
        self.off_uh = self.off_ur + 2 * N
        self.off_dl = self.off_uh + 2 * N

        p2k = np.empty(self.n_prim, dtype=np.int64)
        for k in range(N):
            p2k[3 * k : 3 * k + 3] = base[k] + np.arange(3)
            p2k[self.off_ur + 2 * k : self.off_ur + 2 * k + 2] = base[k] + 3 + np.arange(2)
            p2k[self.off_uh + 2 * k : self.off_uh + 2 * k + 2] = base[k] + 5 + np.arange(2)
            p2k[self.off_dl + k] = base[k] + 7
        p2k[3 * N : 3 * N + 3] = 3 + STAGE * N + np.arange(3)
        self.prim2kkt = p2k

        # equality rows: [pin (3), dynamics (3N), stationarity (2N)]
        e2k = np.empty(self.m_eq, dtype=np.int64)
        e2k[:3] = np.arange(3)
        for k in range(N):
            e2k[3 + 3 * k : 6 + 3 * k] = base[k] + 10 + np.arange(3)
            e2k[3 + 3 * N + 2 * k : 5 + 3 * N + 2 * k] = base[k] + 8 + np.arange(2)
        self.eq2kkt = e2k

        # KKT diagonal: 2*weights on primal slots, small negative
        # regularization on multiplier slots so the LU never hits an exact
        # zero pivot when a stationarity row degenerates.
        hdiag = np.zeros(self.n_kkt)
        hdiag[p2k[: 3 * N].reshape(N, 3)[:, 0]] = 2.0 * self.qr[0]
        hdiag[p2k[: 3 * N].reshape(N, 3)[:, 1]] = 2.0 * self.qr[1]
        hdiag[p2k[: 3 * N].reshape(N, 3)[:, 2]] = 2.0 * self.qr[2]
        hdiag[p2k[3 * N : 3 * N + 3]] = 2.0 * self.pr
        hdiag[p2k[self.off_ur : self.off_uh].reshape(N, 2)[:, 0]] = 2.0 * self.rr[0]
        hdiag[p2k[self.off_ur : self.off_uh].reshape(N, 2)[:, 1]] = 2.0 * self.rr[1]
        hdiag[p2k[self.off_uh : self.off_dl].reshape(N, 2)[:, 0]] = 2.0 * self.rh[0]
        hdiag[p2k[self.off_uh : self.off_dl].reshape(N, 2)[:, 1]] = 2.0 * self.rh[1]
        hdiag[p2k[self.off_dl :]] = 2.0 * self.w_slack
        self.h_prim = hdiag[p2k].copy()  # objective Hessian diag, primal order
        hdiag[e2k] = -1.0e-11
        self._kkt_diag = hdiag

        def flatpos(rows, cols):
            rows = np.asarray(rows, dtype=np.int64)
            cols = np.asarray(cols, dtype=np.int64)
            return ((KL + KU + rows - cols) * self.n_kkt + cols).ravel()

        def block(rows_base, n_rows, cols_base, n_cols):
            """(N, n_rows, n_cols) row/col grids for one per-stage block."""
            r = rows_base[:, None, None] + np.arange(n_rows)[None, :, None]
            c = cols_base[:, None, None] + np.arange(n_cols)[None, None, :]
            r, c = np.broadcast_arrays(r, c)
            return flatpos(r, c)

        # base-band families, concatenated in the exact order values are
        # produced in base_band()
        diag_pos = flatpos(np.arange(self.n_kkt), np.arange(self.n_kkt))
        pin_r = np.repeat(np.arange(3), 3)
        pin_c = np.tile(3 + np.arange(3), 3)
        pos = [
            diag_pos,
            flatpos(pin_r, pin_c),          # (pi, x0)    = I
            flatpos(pin_c, pin_r),          # (x0, pi)    = I
            block(base + 8, 2, base + 0, 3),    # (nu, x)   = Px
            block(base + 0, 3, base + 8, 2),    # mirror
            block(base + 8, 2, base + 5, 2),    # (nu, uH)  = Pu
            block(base + 5, 2, base + 8, 2),    # mirror
            block(base + 10, 3, base + 0, 3),   # (mu, x)   = A
            block(base + 0, 3, base + 10, 3),   # mirror
            block(base + 10, 3, base + 3, 2),   # (mu, uR)  = BR
            block(base + 3, 2, base + 10, 3),   # mirror
            block(base + 10, 3, base + 5, 2),   # (mu, uH)  = BH
            block(base + 5, 2, base + 10, 3),   # mirror
            block(base + 10, 3, base + STAGE, 3),  # (mu, x_{k+1}) = -I
            block(base + STAGE, 3, base + 10, 3),  # mirror
        ]
        self._base_pos = np.concatenate(pos)
        eye = np.eye(3).ravel()
        self._const_pin = np.concatenate([eye, eye])
        self._const_negeye = np.tile(-eye, self.N)

        # sigma (barrier curvature) scatter positions
        if self.n_obs:
            knot = np.concatenate([base, [3 + STAGE * self.N]])  # x slot base, knots 0..N
            kx = knot[:, None, None] + np.arange(2)[None, :, None]
            ky = knot[:, None, None] + np.arange(2)[None, None, :]
            kx, ky = np.broadcast_arrays(kx, ky)
            self._pos_knotdiag = flatpos(kx, ky)                     # (N+1,2,2)
            self._pos_deltadiag = flatpos(base + 7, base + 7)        # (N,)
            xr = base[:, None] + np.arange(2)[None, :]
            dcol = np.broadcast_to((base + 7)[:, None], xr.shape)
            self._pos_cross_xd = flatpos(xr, dcol)                   # (N,2)
            self._pos_cross_dx = flatpos(dcol, xr)
            x1r = base[:, None] + STAGE + np.arange(2)[None, :]
            self._pos_cross_x1d = flatpos(x1r, dcol)
            self._pos_cross_dx1 = flatpos(dcol, x1r)
            cr = base[:, None, None] + np.arange(2)[None, :, None]
            cc = base[:, None, None] + STAGE + np.arange(2)[None, None, :]
            cr, cc = np.broadcast_arrays(cr, cc)
            self._pos_cross_xx1 = flatpos(cr, cc)                    # (N,2,2)
            # mirror block: row index must vary along the middle axis so the
            # raveled positions line up with the transposed value array
            self._pos_cross_x1x = flatpos(
                cc.transpose(0, 2, 1), cr.transpose(0, 2, 1)
            )
        ur_slots = (base[:, None] + 3 + np.arange(2)[None, :])
        self._pos_ur_diag = flatpos(ur_slots, ur_slots)              # (N,2)

        # locked robot-input components: overwrite their KKT rows with the
        # identity so the direction solve returns zero for them
        lock_rows = []
        for comp in range(2):
            if self.locked[comp]:
                lock_rows.extend((base + 3 + comp).tolist())
        self.lock_rows = np.asarray(sorted(lock_rows), dtype=np.int64)
        self._lock_rows = self.lock_rows
        if len(self._lock_rows):
            zero_pos = []
            diag_lock = []
            for i in self._lock_rows:
                j = np.arange(max(0, i - KL), min(self.n_kkt - 1, i + KU) + 1)
                zero_pos.append(flatpos(np.full_like(j, i), j))
                diag_lock.append(flatpos([i], [i]))
            self._lock_zero_pos = np.concatenate(zero_pos)
            self._lock_diag_pos = np.concatenate(diag_lock)
        else:
            self._lock_zero_pos = np.empty(0, dtype=np.int64)
            self._lock_diag_pos = np.empty(0, dtype=np.int64)

    # ----- evaluation -----------------------------------------------------

    def residuals(self, xs, ur, uh, dl):
        """Constraint residuals, objective value, and the squared distance of
        the closest predicted position to any obstacle center (for the
        line-search domain guard).  Returns
        ``(cost, c_dyn, c_stat, c_cbf, min_d2)``.
        """
        N, T, lam = self.N, self.ts, self.lam
        th = self.theta
        cos = np.cos(xs[:N, 2])
        sin = np.sin(xs[:N, 2])

        ub = lam * ur + (1.0 - lam) * uh
        c_dyn = np.empty((N, 3))
        c_dyn[:, 0] = xs[:N, 0] + T * ub[:, 0] * cos - xs[1:, 0]
        c_dyn[:, 1] = xs[:N, 1] + T * ub[:, 0] * sin - xs[1:, 1]
        c_dyn[:, 2] = xs[:N, 2] + T * ub[:, 1] - xs[1:, 2]

        # stationarity of the modeled human objective at uh
        px = xs[:N, 0] + T * uh[:, 0] * cos
        py = xs[:N, 1] + T * uh[:, 0] * sin
        pyaw = xs[:N, 2] + T * uh[:, 1]
        e1 = px - self.goal[0]
        e2 = py - self.goal[1]
        e3 = _wrap(pyaw - self.goal[2])
        phi_v = 2.0 * T * (cos * th[0] * e1 + sin * th[1] * e2) + 2.0 * th[3] * uh[:, 0]
        phi_w = 2.0 * T * th[2] * e3 + 2.0 * th[3] * uh[:, 1]
        min_d2 = np.inf
        if self.n_obs:
            r1 = px[:, None] - self.centers[None, :, 0]
            r2 = py[:, None] - self.centers[None, :, 1]
            q_raw = r1 * r1 + r2 * r2
            min_d2 = float(q_raw.min())
            q = np.maximum(q_raw, _SQRT_GUARD)
            u_r = cos[:, None] * r1 + sin[:, None] * r2
            phi_v = phi_v - 2.0 * th[4] * T * np.sum(u_r / q, axis=1)
        c_stat = np.column_stack([phi_v, phi_w])

        c_cbf = np.empty((N, self.n_obs))
        if self.n_obs:
            d1 = xs[:, 0:1] - self.centers[None, :, 0]
            d2 = xs[:, 1:2] - self.centers[None, :, 1]
            knot_d2 = d1 * d1 + d2 * d2
            min_d2 = min(min_d2, float(knot_d2.min()))
            h = np.sqrt(knot_d2 + _SQRT_GUARD) - self.d_th
            c_cbf = h[1:] - (1.0 - self.gamma) * h[:-1] - dl[:, None]

        e = xs - self.ref
        ew = _wrap(e[:, 2])
        cost = (
            float(np.einsum("kj,j,kj->", e[:-1, :2], self.qr[:2], e[:-1, :2]))
            + float(self.qr[2] * np.dot(ew[:-1], ew[:-1]))
            + float(np.dot(self.pr[:2] * e[-1, :2], e[-1, :2]))
            + float(self.pr[2] * ew[-1] * ew[-1])
            + float(np.einsum("kj,j,kj->", ur, self.rr, ur))
            + float(np.einsum("kj,j,kj->", uh, self.rh, uh))
            + float(self.w_slack * np.dot(dl, dl))
        )
        return cost, c_dyn, c_stat, c_cbf, min_d2

    def jacobians(self, xs, ur, uh, dl):
        """Linearization blocks at the current iterate.

        Returns a dict with dynamics blocks A/BR/BH, stationarity blocks
        Px/Pu, barrier values/gradients h/Gh at every knot, and the objective
        gradient in the grouped primal ordering.
        """
        N, T, lam = self.N, self.ts, self.lam
        th = self.theta
        cos = np.cos(xs[:N, 2])
        sin = np.sin(xs[:N, 2])
        ub_v = lam * ur[:, 0] + (1.0 - lam) * uh[:, 0]

        A = np.tile(np.eye(3), (N, 1, 1))
        A[:, 0, 2] = -T * ub_v * sin
        A[:, 1, 2] = T * ub_v * cos

        BR = np.zeros((N, 3, 2))
        BR[:, 0, 0] = lam * T * cos
        BR[:, 1, 0] = lam * T * sin
        BR[:, 2, 1] = lam * T
        BH = np.zeros((N, 3, 2))
        BH[:, 0, 0] = (1.0 - lam) * T * cos
        BH[:, 1, 0] = (1.0 - lam) * T * sin
        BH[:, 2, 1] = (1.0 - lam) * T

        px = xs[:N, 0] + T * uh[:, 0] * cos
        py = xs[:N, 1] + T * uh[:, 0] * sin
        pyaw = xs[:N, 2] + T * uh[:, 1]
        e1 = px - self.goal[0]
        e2 = py - self.goal[1]

        Px = np.zeros((N, 2, 3))
        Pu = np.zeros((N, 2, 2))
        Px[:, 0, 0] = 2.0 * T * cos * th[0]
        Px[:, 0, 1] = 2.0 * T * sin * th[1]
        Px[:, 0, 2] = 2.0 * T * (
            -sin * th[0] * e1 + cos * th[1] * e2
            + T * uh[:, 0] * cos * sin * (th[1] - th[0])
        )
        Px[:, 1, 2] = 2.0 * T * th[2]
        Pu[:, 0, 0] = 2.0 * T * T * (cos * cos * th[0] + sin * sin * th[1]) + 2.0 * th[3]
        Pu[:, 1, 1] = 2.0 * T * T * th[2] + 2.0 * th[3]
        if self.n_obs:
            r1 = px[:, None] - self.centers[None, :, 0]
            r2 = py[:, None] - self.centers[None, :, 1]
            q = np.maximum(r1 * r1 + r2 * r2, _SQRT_GUARD)
            u_r = cos[:, None] * r1 + sin[:, None] * r2
            u_p = -sin[:, None] * r1 + cos[:, None] * r2
            c3 = 2.0 * th[4] * T
            Px[:, 0, 0] -= c3 * np.sum((cos[:, None] * q - 2.0 * u_r * r1) / (q * q), axis=1)
            Px[:, 0, 1] -= c3 * np.sum((sin[:, None] * q - 2.0 * u_r * r2) / (q * q), axis=1)
            Px[:, 0, 2] -= c3 * np.sum(
                u_p / q - 2.0 * T * uh[:, 0:1] * u_r * u_p / (q * q), axis=1
            )
            Pu[:, 0, 0] -= c3 * T * np.sum(1.0 / q - 2.0 * u_r * u_r / (q * q), axis=1)

        h = np.zeros((N + 1, self.n_obs))
        Gh = np.zeros((N + 1, self.n_obs, 2))
        if self.n_obs:
            d1 = xs[:, 0:1] - self.centers[None, :, 0]
            d2 = xs[:, 1:2] - self.centers[None, :, 1]
            root = np.sqrt(d1 * d1 + d2 * d2 + _SQRT_GUARD)
            h = root - self.d_th
            Gh[:, :, 0] = d1 / root
            Gh[:, :, 1] = d2 / root

        e = xs - self.ref
        e[:, 2] = _wrap(e[:, 2])
        grad = np.empty(self.n_prim)
        gx = grad[: 3 * (N + 1)].reshape(N + 1, 3)
        gx[:N] = 2.0 * self.qr * e[:N]
        gx[N] = 2.0 * self.pr * e[N]
        grad[self.off_ur : self.off_uh] = (2.0 * self.rr * ur).ravel()
        grad[self.off_uh : self.off_dl] = (2.0 * self.rh * uh).ravel()
        grad[self.off_dl :] = 2.0 * self.w_slack * dl
        return {
            "A": A, "BR": BR, "BH": BH, "Px": Px, "Pu": Pu,
            "h": h, "Gh": Gh, "grad": grad,
        }

    # ----- band assembly ---------------------------------------------------

    def base_band(self, jac) -> np.ndarray:
        """(Re)build the KKT band for the current linearization, without the
        barrier/bound curvature terms.  Returns the internal buffer."""
        band = self._band
        band.fill(0.0)
        flat = band.ravel()
        Px, Pu = jac["Px"], jac["Pu"]
        A, BR, BH = jac["A"], jac["BR"], jac["BH"]
        vals = np.concatenate([
            self._kkt_diag,
            self._const_pin,
            Px.ravel(), Px.transpose(0, 2, 1).ravel(),
            Pu.ravel(), Pu.transpose(0, 2, 1).ravel(),
            A.ravel(), A.transpose(0, 2, 1).ravel(),
            BR.ravel(), BR.transpose(0, 2, 1).ravel(),
            BH.ravel(), BH.transpose(0, 2, 1).ravel(),
            self._const_negeye, self._const_negeye,
        ])
        flat[self._base_pos] = vals
        if len(self._lock_rows):
            flat[self._lock_zero_pos] = 0.0
            flat[self._lock_diag_pos] = 1.0
        return band

    def add_sigma(self, band, jac, sigma_cbf, sigma_box) -> None:
        """Add G' diag(sigma) G for the active inequalities.

        ``sigma_cbf`` is (N, n_obs) or None; ``sigma_box`` is (N, 2) holding
        the summed upper+lower barrier weights per robot-input component
        (zero entries for locked components).
        """
        flat = band.ravel()
        if self.n_obs and sigma_cbf is not None:
            Gh = jac["Gh"]
            a = -(1.0 - self.gamma) * Gh[:-1]          # (N, nO, 2) on x_k
            c = Gh[1:]                                  # on x_{k+1}
            s = sigma_cbf
            # each position family below touches a set of distinct cells, so
            # plain fancy += is exact (and much cheaper than np.add.at)
            knot = np.zeros((self.N + 1, 2, 2))
            knot[:-1] += np.einsum("kl,kli,klj->kij", s, a, a)
            knot[1:] += np.einsum("kl,kli,klj->kij", s, c, c)
            flat[self._pos_knotdiag] += knot.ravel()
            flat[self._pos_deltadiag] += s.sum(axis=1)
            cross_xd = -np.einsum("kl,kli->ki", s, a)
            flat[self._pos_cross_xd] += cross_xd.ravel()
            flat[self._pos_cross_dx] += cross_xd.ravel()
            cross_x1d = -np.einsum("kl,kli->ki", s, c)
            flat[self._pos_cross_x1d] += cross_x1d.ravel()
            flat[self._pos_cross_dx1] += cross_x1d.ravel()
            cross = np.einsum("kl,kli,klj->kij", s, a, c)
            flat[self._pos_cross_xx1] += cross.ravel()
            flat[self._pos_cross_x1x] += cross.transpose(0, 2, 1).ravel()
        if sigma_box is not None:
            flat[self._pos_ur_diag] += sigma_box.ravel()

    # ----- constraint-Jacobian operators ------------------------------------

    def _split(self, z):
        n = self.N
        xs = z[: 3 * (n + 1)].reshape(n + 1, 3)
        ur = z[self.off_ur : self.off_uh].reshape(n, 2)
        uh = z[self.off_uh : self.off_dl].reshape(n, 2)
        dl = z[self.off_dl :]
        return xs, ur, uh, dl

    def eq_matvec(self, jac, dz: np.ndarray) -> np.ndarray:
        n = self.N
        dxs, dur, duh, _ = self._split(dz)
        out = np.empty(self.m_eq)
        out[:3] = dxs[0]
        dyn = (
            np.einsum("kij,kj->ki", jac["A"], dxs[:n])
            + np.einsum("kij,kj->ki", jac["BR"], dur)
            + np.einsum("kij,kj->ki", jac["BH"], duh)
            - dxs[1:]
        )
        out[3 : 3 + 3 * n] = dyn.ravel()
        stat = np.einsum("kij,kj->ki", jac["Px"], dxs[:n]) + np.einsum(
            "kij,kj->ki", jac["Pu"], duh
        )
        out[3 + 3 * n :] = stat.ravel()
        return out

    def eq_rmatvec(self, jac, y: np.ndarray) -> np.ndarray:
        n = self.N
        out = np.zeros(self.n_prim)
        gxs, gur, guh, _ = self._split(out)
        y_dyn = y[3 : 3 + 3 * n].reshape(n, 3)
        y_stat = y[3 + 3 * n :].reshape(n, 2)
        gxs[0] += y[:3]
        gxs[:n] += np.einsum("kij,ki->kj", jac["A"], y_dyn)
        gxs[1:] -= y_dyn
        gur[:] += np.einsum("kij,ki->kj", jac["BR"], y_dyn)
        guh[:] += np.einsum("kij,ki->kj", jac["BH"], y_dyn)
        gxs[:n] += np.einsum("kij,ki->kj", jac["Px"], y_stat)
        guh[:] += np.einsum("kij,ki->kj", jac["Pu"], y_stat)
        return out

    def ineq_matvec(self, jac, dz: np.ndarray) -> np.ndarray:
        dxs, dur, _, ddl = self._split(dz)
        parts = []
        if self.m_cbf:
            a = -(1.0 - self.gamma) * jac["Gh"][:-1]
            c = jac["Gh"][1:]
            rows = (
                np.einsum("kli,ki->kl", a, dxs[:-1, :2])
                + np.einsum("kli,ki->kl", c, dxs[1:, :2])
                - ddl[:, None]
            )
            parts.append(rows.ravel())
        if self.box_active[0]:
            parts += [-dur[:, 0], dur[:, 0]]
        if self.box_active[1]:
            parts += [-dur[:, 1], dur[:, 1]]
        return np.concatenate(parts) if parts else np.empty(0)

    def ineq_rmatvec(self, jac, w: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_prim)
        gxs, gur, _, gdl = self._split(out)
        pos = 0
        if self.m_cbf:
            wc = w[: self.m_cbf].reshape(self.N, self.n_obs)
            a = -(1.0 - self.gamma) * jac["Gh"][:-1]
            c = jac["Gh"][1:]
            gxs[:-1, :2] += np.einsum("kli,kl->ki", a, wc)
            gxs[1:, :2] += np.einsum("kli,kl->ki", c, wc)
            gdl[:] -= wc.sum(axis=1)
            pos = self.m_cbf
        n = self.N
        if self.box_active[0]:
            gur[:, 0] += -w[pos : pos + n] + w[pos + n : pos + 2 * n]
            pos += 2 * n
        if self.box_active[1]:
            gur[:, 1] += -w[pos : pos + n] + w[pos + n : pos + 2 * n]
        return out
