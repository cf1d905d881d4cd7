"""Compiled versus pure-Python resolvent kernels.

Times ``resolve_log`` (cold and warm-started) and ``shifted_yosida`` on
fields of grid size N^3 for both backends and prints one row per case.

Usage: python benchmarks/bench_kernels.py [--sizes 16 32] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from stochlog import kernels

LAM, TOL, MAX_ITER = 0.25, 1e-14, 100


def cases(r):
    def cold(mod):
        y = np.full(r.size, np.nan)
        kernels.resolve_log(r, LAM, TOL, MAX_ITER, y, backend=mod)

    warm_y = np.full(r.size, np.nan)
    kernels.resolve_log(r, LAM, TOL, MAX_ITER, warm_y)
    r_next = r + 1e-3 * np.sin(np.arange(r.size))

    def warm(mod):
        y = warm_y.copy()
        kernels.resolve_log(r_next, LAM, TOL, MAX_ITER, y, backend=mod)

    def shifted(mod):
        y = warm_y.copy()
        out = np.empty(r.size)
        kernels.shifted_yosida(r_next, LAM, -0.5, TOL, MAX_ITER, y, out, backend=mod)

    return {"resolve_log cold": cold, "resolve_log warm": warm, "shifted_yosida warm": shifted}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = ["python"] + (["cython"] if kernels.compiled_available() else [])
    print(f"{'case':22s} {'N':>4s} " + " ".join(f"{b + ' [ms]':>14s}" for b in backends)
          + ("  speedup" if len(backends) == 2 else ""))
    rng = np.random.default_rng(0)
    for n in args.sizes:
        r = rng.normal(1.0, 2.0, n ** 3)
        for name, fn in cases(r).items():
            ms = []
            for b in backends:
                t = min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat))
                ms.append(1e3 * t)
            row = f"{name:22s} {n:4d} " + " ".join(f"{v:14.3f}" for v in ms)
            if len(ms) == 2:
                row += f"  {ms[0] / ms[1]:7.1f}x"
            print(row)


if __name__ == "__main__":
    main()
