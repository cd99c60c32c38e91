import time

import numpy as np

from conav.arbitration import BlendConfig
from conav.nmpc.config import NmpcConfig
from conav.sim.episode import run_episode
from conav.sim.operators import OperatorSpec, build_operator
from conav.sim.scenario import load_builtin


def zero_operator():
    return build_operator(OperatorSpec(kind="scripted_waypoints", waypoints=()))


def run(w, lam=1.0, name="lab_gA", dur=120.0):
    sc = load_builtin(name)
    t0 = time.perf_counter()
    result = run_episode(
        sc,
        zero_operator(),
        nmpc_cfg=NmpcConfig(blend_lambda=lam, slack_weight=w),
        blend_cfg=BlendConfig(blend_lambda=lam),
        duration_limit=dur,
    )
    wall = time.perf_counter() - t0
    psi = [r.psi_min for r in result.trace if r.psi_min is not None and np.isfinite(r.psi_min)]
    times = [r.solver_time for r in result.trace]
    pm = min(psi) if psi else float("nan")
    print(
        f"w={w:g} lam={lam}: success={result.success} t_goal={result.time_to_goal} "
        f"min_dist={result.min_obstacle_distance:.4f} psi_min={pm:.5f} "
        f"ticks={len(result.trace)} mean_solve={np.mean(times) * 1e3:.1f}ms wall={wall:.0f}s"
    )
    return result


run(1.0e3)
run(1.0e4)
run(10.0)
