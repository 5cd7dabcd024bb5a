"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``; pass ``--quick`` for a short run.
"""

import argparse
import timeit

import numpy as np

from stochlin import _kernels_py as py

try:
    from stochlin import _kernels as cy
except ImportError:
    cy = None


def cases(quick):
    P, n = (2000, 256) if quick else (20000, 1000)
    paths = np.arange(P, dtype=np.uint64)
    values = np.ascontiguousarray(np.random.default_rng(0).standard_normal((200, 1024 if quick else 2048)).cumsum(1))
    lag = np.zeros(values.shape[1])
    lag[1:] = np.arange(1, values.shape[1], dtype=float) ** -3.4
    ctr = np.random.default_rng(1).integers(0, 2**32, size=(P * 16, 4), dtype=np.uint64).astype(np.uint32)
    return {
        f"philox4x32 ({ctr.shape[0]} blocks)": lambda m: m.philox4x32(ctr, 0x1234, 0x5678),
        f"philox_normals ({P} x {n})": lambda m: m.philox_normals(12345, paths, 0, n),
        f"gagliardo_lag_sums ({values.shape[0]} x {values.shape[1]}, p=4)":
            lambda m: m.gagliardo_lag_sums(values, lag, 4.0),
    }


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"{'kernel':48s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s}")
    for name, fn in cases(args.quick).items():
        t_py = best_of(lambda: fn(py), args.repeat)
        if cy is None:
            print(f"{name:48s} {t_py:11.4f} {'n/a':>11s} {'':>8s}")
            continue
        t_cy = best_of(lambda: fn(cy), args.repeat)
        print(f"{name:48s} {t_py:11.4f} {t_cy:11.4f} {t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
