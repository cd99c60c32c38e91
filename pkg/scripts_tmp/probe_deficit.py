import numpy as np

from conav.arbitration import BlendConfig
from conav.dynamics import VelocityCommand
from conav.nmpc.config import NmpcConfig
from conav.sim.episode import ControlLoop
from conav.sim.scenario import load_builtin

sc = load_builtin("lab_gA")
centers = np.array(sc.obstacles.centers, dtype=float)
d_th = sc.obstacles.d_th

loop = ControlLoop(
    sc,
    nmpc_cfg=NmpcConfig(blend_lambda=1.0, slack_weight=1.0e3),
    blend_cfg=BlendConfig(blend_lambda=1.0),
)


def plan_rows(sol):
    xs = np.asarray(sol.states)
    d = np.sqrt(((xs[:, None, :2] - centers[None]) ** 2).sum(-1))
    h = d - d_th
    rows = h[1:] - 0.9 * h[:-1]
    return h, rows


for k in range(171):
    rec = loop.tick(VelocityCommand(0.0, 0.0))
    sol = loop._solver.last_solution
    h, rows = plan_rows(sol)
    deficit = float(-np.minimum(rows, 0.0).sum())
    slacks = np.asarray(sol.slacks)
    if k % 10 == 0 or deficit > 1e-6 or (slacks.min() < -1e-6):
        print(
            f"t={rec.t:5.1f} viol={sol.max_constraint_violation:9.2e} conv={sol.converged} "
            f"fallback={rec.fallback_used} plan_hmin={h.min():+7.4f} deficit={deficit:8.5f} "
            f"dl_min={slacks.min():+9.5f} psi={rec.psi_min:+8.5f} hx={rec.h_min:+7.4f}"
        )
    if deficit > 0.02 and k > 60:
        break
