"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--particles N] [--steps K] [--repeat R]

Both backends draw from the same counter RNG, so the script also checks
that they end in the same state before reporting throughput.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from kinqsd.domains import Interval
from kinqsd.integrate import IntegratorConfig, run_ensemble
from kinqsd.kernels import HAVE_COMPILED
from kinqsd.model import KineticState, double_well_langevin, harmonic_langevin
from kinqsd.qsd import fleming_viot_run

CASES = {
    "harmonic/splitting": (harmonic_langevin(), Interval(-2.0, 2.0), "langevin-splitting"),
    "harmonic/euler": (harmonic_langevin(), Interval(-2.0, 2.0), "euler-maruyama"),
    "double-well/splitting": (double_well_langevin(), Interval(-1.0, 1.0), "langevin-splitting"),
}


def _best(fn, repeat):
    out, best = None, np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_ensemble(n, steps, repeat):
    rows = []
    start = KineticState([0.0], [0.0])
    for name, (model, O, scheme) in CASES.items():
        res = {}
        for backend in ("python", "compiled"):
            cfg = IntegratorConfig(dt=1e-3, max_time=steps * 1e-3, seed=1, scheme=scheme,
                                   backend=backend)
            res[backend] = _best(lambda: run_ensemble(start, model, O, cfg, n, steps * 1e-3),
                                 repeat)
        same = np.allclose(res["python"][1].q, res["compiled"][1].q, rtol=1e-9, atol=1e-12)
        rows.append((f"ensemble {name}", res["python"][0], res["compiled"][0], n * steps, same))
    return rows


def bench_fv(n, steps, repeat):
    rows = []
    start = KineticState([0.0], [0.0])
    model, O = double_well_langevin(), Interval(-1.0, 1.0)
    res = {}
    for backend in ("python", "compiled"):
        cfg = IntegratorConfig(dt=1e-3, max_time=steps * 1e-3, seed=1, backend=backend)
        res[backend] = _best(lambda: fleming_viot_run(start, model, O, n, cfg, burn_in=0.0),
                             repeat)
    same = np.allclose(res["python"][1].weights, res["compiled"][1].weights)
    rows.append(("fleming-viot double-well", res["python"][0], res["compiled"][0], n * steps,
                 same))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--particles", type=int, default=10_000)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not HAVE_COMPILED:
        print("compiled kernels are not built; nothing to compare")
        return 1
    rows = bench_ensemble(args.particles, args.steps, args.repeat)
    rows += bench_fv(args.particles, args.steps, args.repeat)
    print(f"{'case':34s} {'numpy s':>9s} {'compiled s':>11s} {'speedup':>8s} "
          f"{'Msteps/s':>9s}  agree")
    for name, tp, tc, work, same in rows:
        print(f"{name:34s} {tp:9.3f} {tc:11.3f} {tp / tc:8.1f} {work / tc / 1e6:9.2f}  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
