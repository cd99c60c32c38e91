import cProfile
import pstats
import sys

import numpy as np

from conav.nmpc.config import NmpcConfig
from conav.sim.episode import run_episode
from conav.sim.scenario import load_builtin
from conav.sim.operators import OperatorSpec, build_operator
from conav.arbitration import BlendConfig

w = float(sys.argv[1]) if len(sys.argv) > 1 else 1.0e3
sc = load_builtin("lab_gA")
op = build_operator(OperatorSpec(kind="scripted_waypoints", waypoints=()))
cfg = NmpcConfig(blend_lambda=1.0, slack_weight=w)
bl = BlendConfig(blend_lambda=1.0)

pr = cProfile.Profile()
pr.enable()
result = run_episode(sc, op, nmpc_cfg=cfg, blend_cfg=bl, duration_limit=30.0, seed=0)
pr.disable()
print("success", result.success, "min_dist", f"{result.min_obstacle_distance:.4f}")
st = pstats.Stats(pr)
st.sort_stats("cumulative").print_stats(22)
