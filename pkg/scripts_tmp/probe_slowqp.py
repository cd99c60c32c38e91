import sys

import numpy as np

import conav.nmpc.qp as qpmod
import conav.nmpc.sqp as sqpmod
from conav import kernels
from conav.arbitration import BlendConfig
from conav.dynamics import VelocityCommand
from conav.nmpc.config import NmpcConfig
from conav.sim.episode import ControlLoop
from conav.sim.scenario import load_builtin

w = float(sys.argv[1]) if len(sys.argv) > 1 else 1.0e3
thresh = int(sys.argv[2]) if len(sys.argv) > 2 else 75

orig = qpmod.solve_qp
captured = {}

def traced_ip(tr, z, jac, res, tol, damp):
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
    scale_p = max(scale_p, 1.0 + float(np.abs(c_in).max(initial=0.0)))

    def kkt_solve(fact, rhs_prim, rhs_eq):
        b = np.zeros(tr.n_kkt)
        b[tr.prim2kkt] = rhs_prim
        b[tr.eq2kkt] = rhs_eq
        if len(lock_kkt):
            b[lock_kkt] = 0.0
        sol = fact.solve(b)
        return sol[tr.prim2kkt], -sol[tr.eq2kkt]

    xi0 = tr.ineq_matvec(jac, dz) + c_in
    s = np.maximum(xi0, 0.1)
    lam = np.ones(m)
    print(f"m={m} m_cbf={tr.m_cbf} m_box={tr.m_box} m_dlo={tr.m_dlo} damp={damp}")
    print(f"xi0: min={xi0.min():.2e} (row {xi0.argmin()}) n_below_0.1={int((xi0<0.1).sum())}")
    for it in range(1, 101):
        xi = tr.ineq_matvec(jac, dz) + c_in
        r_p2 = xi - s
        r_p1 = tr.eq_matvec(jac, dz) + c_eq
        r_d = hprim * dz + g - tr.eq_rmatvec(jac, y) - tr.ineq_rmatvec(jac, lam)
        if len(lock_idx):
            r_d[lock_idx] = 0.0
        mu = float(s @ lam) / m
        if (np.abs(r_d).max(initial=0.0) <= tol * scale_d
                and np.abs(r_p1).max(initial=0.0) <= tol * scale_p
                and np.abs(r_p2).max(initial=0.0) <= tol * scale_p
                and mu <= tol * scale_d):
            print(f"converged at {it}")
            break
        if it == 1:
            print(f"scale_d={scale_d:.2e} scale_p={scale_p:.2e} rd_tol={tol*scale_d:.2e} rp_tol={tol*scale_p:.2e} mu_tol={tol*scale_d:.2e}")
        sigma_w = np.clip(lam / s, 1.0e-14, 1.0e14)
        fact = qpmod._factor_with_retries(tr, jac, sigma_w, damp)
        rc = lam * s
        rhs1 = -r_d - tr.ineq_rmatvec(jac, rc / s + sigma_w * r_p2)
        dz_a, dy_a = kkt_solve(fact, rhs1, -r_p1)
        ds_a = tr.ineq_matvec(jac, dz_a) + r_p2
        dl_a = -rc / s - sigma_w * ds_a
        a_p = min(1.0, kernels.step_fraction(s, ds_a))
        a_d = min(1.0, kernels.step_fraction(lam, dl_a))
        mu_aff = float((s + a_p * ds_a) @ (lam + a_d * dl_a)) / m
        centering = np.clip((max(mu_aff, 0.0) / mu) ** 3, 0.0, 1.0) if mu > 0 else 0.0
        rc = lam * s + ds_a * dl_a - centering * mu
        rhs1 = -r_d - tr.ineq_rmatvec(jac, rc / s + sigma_w * r_p2)
        dz_c, dy_c = kkt_solve(fact, rhs1, -r_p1)
        ds_c = tr.ineq_matvec(jac, dz_c) + r_p2
        dl_c = -rc / s - sigma_w * ds_c
        a_p = min(1.0, 0.995 * kernels.step_fraction(s, ds_c))
        a_d = min(1.0, 0.995 * kernels.step_fraction(lam, dl_c))
        if it <= 30 or it % 5 == 0 or a_p < 0.1 or a_d < 0.1:
            bp = int(np.argmin(np.where(ds_c < 0, s / np.maximum(-ds_c, 1e-300), np.inf)))
            bd = int(np.argmin(np.where(dl_c < 0, lam / np.maximum(-dl_c, 1e-300), np.inf)))
            def rowname(i):
                if i < tr.m_cbf:
                    return f"cbf[k={i // tr.n_obs}]"
                if i < tr.m_cbf + tr.m_box:
                    return f"box[{i - tr.m_cbf}]"
                return f"dlo[k={i - tr.m_cbf - tr.m_box}]"
            print(f"it={it:3d} mu={mu:.2e} cen={centering:.2f} a_p={a_p:.3f}({rowname(bp)},s={s[bp]:.1e}) a_d={a_d:.3f}({rowname(bd)},lam={lam[bd]:.1e}) rd={np.abs(r_d).max():.1e} rp1={np.abs(r_p1).max():.1e} rp2={np.abs(r_p2).max():.1e}")
        dz = dz + a_p * dz_c
        s = s + a_p * ds_c
        y = y + a_d * dy_c
        lam = lam + a_d * dl_c
    return it

def wrapped(tr, z, jac, res, tol, damp=0.0):
    r = orig(tr, z, jac, res, tol, damp=damp)
    if r.iterations > thresh and not captured:
        captured["x"] = True
        print(f"=== slow QP: {r.iterations} iters, tol={tol} ===")
        traced_ip(tr, z, jac, res, tol, damp)
        sys.exit(0)
    return r

qpmod.solve_qp = wrapped
sqpmod.solve_qp = wrapped

sc = load_builtin("lab_gA")
loop = ControlLoop(sc, nmpc_cfg=NmpcConfig(blend_lambda=1.0, slack_weight=w),
                   blend_cfg=BlendConfig(blend_lambda=1.0))
for i in range(400):
    loop.tick(VelocityCommand(0.0, 0.0))
print("no slow QP found")
