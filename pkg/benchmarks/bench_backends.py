"""Compare the numpy and compiled kernel backends on realistic workloads.

Run from the repository root::

    python3 benchmarks/bench_backends.py [--ticks 40] [--horizon 100]

Times three layers: raw kernel primitives (residuals, jacobians, band
assembly), one full QP solve, and closed-loop solver ticks on the built-in
lab scenario.  The compiled backend is skipped when not built.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

import conav.kernels as kernels
from conav.arbitration import BlendConfig, blend
from conav.dynamics import DynamicsConfig, VelocityCommand, step as dyn_step
from conav.intent import IntentParams
from conav.kernels import numpy_backend
from conav.nmpc import NmpcConfig, NmpcSolver
from conav.nmpc.qp import solve_qp
from conav.nmpc.transcription import Transcription
from conav.sim.scenario import load_builtin

THETA = IntentParams(0.4, 0.4, 5.0, 2.0, 2.0)


def _kernels_for(backend: str, scenario, cfg: NmpcConfig):
    if backend == "numpy":
        mod = numpy_backend
    else:
        import conav.kernels._speedups as mod
    from conav.nmpc.config import build_reference

    ref = build_reference(scenario.goal, cfg.horizon, start=scenario.start)
    return mod.HorizonKernels(
        cfg.horizon,
        cfg.ts,
        cfg.blend_lambda,
        cfg.cbf_gamma,
        scenario.obstacles.d_th,
        THETA.as_array(),
        scenario.goal.as_array(),
        scenario.obstacles.as_array(),
        ref.poses,
        cfg.state_weights,
        cfg.terminal_weights,
        cfg.robot_input_weights,
        cfg.human_input_weights,
        cfg.slack_weight,
    )


def time_call(fn, repeats: int = 200) -> float:
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def bench_primitives(backend: str, scenario, cfg: NmpcConfig) -> dict:
    kern = _kernels_for(backend, scenario, cfg)
    rng = np.random.default_rng(7)
    n = cfg.horizon
    xs = np.tile(scenario.start.as_array(), (n + 1, 1)) + 0.01 * rng.standard_normal((n + 1, 3))
    ur = rng.uniform(-0.4, 0.4, (n, 2))
    uh = rng.uniform(-0.8, 0.8, (n, 2))
    dl = np.zeros(n)
    jac = kern.jacobians(xs, ur, uh, dl)
    sigma_cbf = rng.uniform(0.1, 10.0, (n, kern.n_obs)) if kern.n_obs else None
    sigma_box = rng.uniform(0.0, 5.0, (n, 2))
    band = kern.base_band(jac)
    return {
        "residuals": time_call(lambda: kern.residuals(xs, ur, uh, dl)),
        "jacobians": time_call(lambda: kern.jacobians(xs, ur, uh, dl)),
        "base_band": time_call(lambda: kern.base_band(jac)),
        "add_sigma": time_call(lambda: kern.add_sigma(band, jac, sigma_cbf, sigma_box)),
    }


def bench_qp(scenario, cfg: NmpcConfig) -> float:
    tr = Transcription(scenario.start, THETA, scenario, cfg)
    z = np.zeros(tr.n_prim)
    z[: 3 * (cfg.horizon + 1)] = np.tile(scenario.start.as_array(), cfg.horizon + 1)
    res = tr.residuals(z)
    jac = tr.linearize(z)
    return time_call(lambda: solve_qp(tr, z, jac, res, cfg.qp_tolerance), repeats=20)


def bench_ticks(scenario, cfg: NmpcConfig, ticks: int) -> dict:
    solver = NmpcSolver(cfg)
    dcfg = DynamicsConfig(ts=cfg.ts)
    bcfg = BlendConfig()
    x = scenario.start
    times = []
    for _ in range(ticks):
        t0 = time.perf_counter()
        sol, _ = solver.solve_tick(x, THETA, scenario)
        times.append((time.perf_counter() - t0) * 1e3)
        uh = VelocityCommand.from_array(sol.human_inputs[0])
        u, _ = blend(solver.robot_command(sol), uh, bcfg)
        x = dyn_step(x, u, dcfg)
    t = np.asarray(times)
    return {"avg": t.mean(), "p95": np.percentile(t, 95), "max": t.max()}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--ticks", type=int, default=40)
    parser.add_argument("--horizon", type=int, default=100)
    args = parser.parse_args()

    backends = kernels.available_backends()
    scenario = load_builtin("lab_gA")
    cfg = NmpcConfig(horizon=args.horizon)

    print(f"horizon={args.horizon}, obstacles={len(scenario.obstacles)}, "
          f"backends={backends}")
    print()
    header = f"{'primitive':<12}" + "".join(f"{b:>12}" for b in backends)
    print(header)
    prim = {b: bench_primitives(b, scenario, cfg) for b in backends}
    for name in ("residuals", "jacobians", "base_band", "add_sigma"):
        row = f"{name:<12}"
        for b in backends:
            row += f"{prim[b][name]:>10.3f}ms"
        print(row)

    print()
    for b in backends:
        import os

        os.environ["CONAV_KERNELS"] = b
        import importlib

        importlib.reload(kernels)
        qp_ms = bench_qp(scenario, cfg)
        stats = bench_ticks(scenario, cfg, args.ticks)
        print(f"{b:>9}: one QP {qp_ms:7.2f}ms | tick avg {stats['avg']:7.1f}ms "
              f"p95 {stats['p95']:7.1f}ms max {stats['max']:7.1f}ms")


if __name__ == "__main__":
    main()
