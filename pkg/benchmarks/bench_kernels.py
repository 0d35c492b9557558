"""Time the numba and numpy integrator backends on the same workloads.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--grid G]

Numba compilation is excluded by a warm-up call before timing. Each
workload is checked to give the same numbers on both backends.
"""

import argparse
import os
import time

import numpy as np

from pln import _kernels
from pln.continuation import LiftContext, lift_torus
from pln.dynsys import flow
from pln.models import build_builtin
from pln.pnmap import build_section, linearize_pn_map


def workloads(grid):
    b = build_builtin("T2-perturbed", grid=grid)
    x0 = b.torus.point((1, 2)) + np.array([0.0, 0.0, 0.01, 0.0, 0.0, -0.02])
    sec = build_section(b.system, b.torus, (1, 2))
    cls = b.classes[0]
    target = b.torus.beta0 + np.array([0.02, 0.0])

    def one_flow():
        return flow(b.system, cls.coefficients, x0).endpoint

    def variational_flow():
        return flow(b.system, cls.coefficients, x0, with_variational=True).fundamental_matrix

    def linearisation():
        return linearize_pn_map(b.system, sec, cls).A

    def torus_lift():
        ctx = LiftContext(b.system, b.torus, b.torus.beta0)
        return lift_torus(b.system, ctx, target - b.torus.beta0, cls).torus.points

    return {"flow": one_flow, "flow + variational": variational_flow,
            "pn linearisation": linearisation, f"lift {grid}x{grid} torus": torus_lift}


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--grid", type=int, default=8)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    saved = os.environ.get("PLN_BACKEND")
    print(f"{'workload':<22}{'numba [ms]':>12}{'numpy [ms]':>12}{'speed-up':>10}{'max diff':>12}")
    try:
        for name, fn in workloads(args.grid).items():
            row = {}
            for backend in ("numba", "numpy"):
                os.environ["PLN_BACKEND"] = backend
                row[backend] = (best_time(fn, args.repeat), fn())
            diff = float(np.max(np.abs(row["numba"][1] - row["numpy"][1])))
            tn, tp = row["numba"][0], row["numpy"][0]
            print(f"{name:<22}{1e3 * tn:>12.2f}{1e3 * tp:>12.2f}{tp / tn:>10.1f}{diff:>12.1e}")
    finally:
        if saved is None:
            os.environ.pop("PLN_BACKEND", None)
        else:
            os.environ["PLN_BACKEND"] = saved


if __name__ == "__main__":
    main()
