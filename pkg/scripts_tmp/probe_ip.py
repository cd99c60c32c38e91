import sys
import time

import numpy as np

import conav.nmpc.qp as qpmod
import conav.nmpc.sqp as sqpmod
from conav.arbitration import BlendConfig
from conav.dynamics import VelocityCommand
from conav.nmpc.config import NmpcConfig
from conav.sim.episode import ControlLoop
from conav.sim.scenario import load_builtin

w = float(sys.argv[1]) if len(sys.argv) > 1 else 1.0e3
n_ticks = int(sys.argv[2]) if len(sys.argv) > 2 else 180

ip_counts = []
orig = qpmod.solve_qp

def wrapped(*a, **k):
    r = orig(*a, **k)
    ip_counts.append(r.iterations)
    return r

qpmod.solve_qp = wrapped
sqpmod.solve_qp = wrapped

sc = load_builtin("lab_gA")
loop = ControlLoop(sc, nmpc_cfg=NmpcConfig(blend_lambda=1.0, slack_weight=w),
                   blend_cfg=BlendConfig(blend_lambda=1.0))
rows = []
for i in range(n_ticks):
    before = len(ip_counts)
    t0 = time.perf_counter()
    rec = loop.tick(VelocityCommand(0.0, 0.0))
    dt = time.perf_counter() - t0
    ticks_ip = ip_counts[before:]
    rows.append((rec.t, dt * 1e3, len(ticks_ip), sum(ticks_ip), rec.h_min))
    if np.hypot(rec.state.x - sc.goal.gx, rec.state.y - sc.goal.gy) < 0.1:
        break

arr = np.array(rows)
print(f"ticks={len(rows)} mean_ms={arr[:,1].mean():.1f} mean_qp_per_tick={arr[:,2].mean():.2f} mean_ip_per_qp={arr[:,3].sum()/max(arr[:,2].sum(),1):.1f}")
print("phase breakdown (t, ms, n_qp, ip_total, h_min):")
for r in rows[:6]:
    print(f"  t={r[0]:5.1f} ms={r[1]:7.1f} qp={int(r[2]):2d} ip={int(r[3]):4d} h={r[4]:.3f}")
sl = slice(6, len(rows), max(1, len(rows)//18))
for r in rows[sl]:
    print(f"  t={r[0]:5.1f} ms={r[1]:7.1f} qp={int(r[2]):2d} ip={int(r[3]):4d} h={r[4]:.3f}")
hist = np.histogram(ip_counts, bins=[0, 10, 20, 30, 40, 60, 80, 101])
print("ip iełhisto bins[0,10,20,30,40,60,80,101]:", hist[0].tolist())
