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

worst = (np.inf, None)
for k in range(270):
    rec = loop.tick(VelocityCommand(0.0, 0.0))
    sol = loop._solver.last_solution
    xs = np.asarray(sol.states)
    d = np.sqrt(((xs[:, None, :2] - centers[None]) ** 2).sum(-1))
    plan_hmin = float(d.min() - d_th)
    if rec.h_min < worst[0]:
        worst = (rec.h_min, rec.t)
    if k % 20 == 0 or rec.h_min < 0.05:
        print(
            f"t={rec.t:5.1f} viol={sol.max_constraint_violation:9.2e} fb={rec.fallback_used} "
            f"plan_hmin={plan_hmin:+8.4f} hx={rec.h_min:+8.4f} psi={rec.psi_min:+8.5f} "
            f"v={rec.u_applied.v:+5.2f} w={rec.u_applied.omega:+5.2f} iters={rec.solver_iters}"
        )
print("worst executed h:", worst)
