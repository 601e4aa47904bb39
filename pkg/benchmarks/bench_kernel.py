"""Compiled vs numpy solver kernel: time per iteration and agreement.

    python3 benchmarks/bench_kernel.py [--cells 250 500 1000] [--iters 2000]

Both kernels start from the same converged 10 MW/m^2 state so the timing
reflects the closed-loop workload (warm state, fixed iteration budget).
"""
import argparse
import time

import numpy as np

from sfrjlab.engine import BoundaryCondition, EngineSolver, build_geometry, build_grid, run_to_steady
from sfrjlab.engine import kernel


def time_kernel(mod, grid, bc, state, iters, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        s = EngineSolver(grid, bc, kernel=mod, state=state)
        t0 = time.perf_counter()
        s.iterate(iters, 10e6)
        best = min(best, time.perf_counter() - t0)
        out = s.state.values.copy()
    return best / iters, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--cells", type=int, nargs="+", default=[250, 500, 1000])
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    names = kernel.available()
    if "cython" not in names:
        print("compiled kernel not built; only the numpy kernel is available")
    bc = BoundaryCondition()
    print(f"{'cells':>6} " + " ".join(f"{n + ' us/it':>14}" for n in names)
          + f" {'speedup':>8} {'max rel diff':>13}")
    for n in args.cells:
        grid = build_grid(build_geometry(), n)
        base = run_to_steady(bc, 10e6, grid).state
        res = {nm: time_kernel(kernel.get(nm), grid, bc, base, args.iters, args.repeat)
               for nm in names}
        line = f"{n:6d} " + " ".join(f"{res[nm][0] * 1e6:14.2f}" for nm in names)
        if len(names) == 2:
            sp = res["python"][0] / res["cython"][0]
            a, b = res["python"][1], res["cython"][1]
            diff = float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-300)))
            line += f" {sp:8.1f} {diff:13.2e}"
        print(line)


if __name__ == "__main__":
    main()
