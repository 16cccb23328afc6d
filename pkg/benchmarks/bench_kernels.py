"""Compare the numba-compiled hot kernels against their numpy / pure-Python fallbacks.

Run with ``python3 benchmarks/bench_kernels.py``. The fallback path is the one
selected by ``MMFLOW_DISABLE_NUMBA=1``; here both are timed in one process by
calling the jitted kernel and the numpy twin directly.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mmflow import kernels
from mmflow._accel import USE_NUMBA


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up (triggers compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng: np.random.Generator):
    # segment_sum: message aggregation shape (edges x channels)
    vals = rng.normal(size=(20000, 64))
    idx = rng.integers(0, 500, size=20000).astype(np.int64)
    yield ("segment_sum 20000x64 -> 500",
           lambda: kernels._segment_sum_kernel(vals, idx, 500),
           lambda: kernels.segment_sum_numpy(vals, idx, 500))

    # radius_pairs: ligand-pocket radius graph over a 16-graph batch
    src = rng.uniform(0, 20, size=(400, 3))
    dst = rng.uniform(0, 20, size=(1200, 3))
    sb = np.repeat(np.arange(16), 25).astype(np.int64)
    db = np.repeat(np.arange(16), 75).astype(np.int64)
    yield ("radius_pairs 400x1200 r=5",
           lambda: kernels._radius_pairs_kernel(src, dst, 5.0, sb, db, False),
           lambda: kernels.radius_pairs_numpy(src, dst, 5.0, sb, db, False))

    pts = rng.uniform(0, 20, size=(300, 3))
    ref = rng.uniform(0, 20, size=(3000, 3))
    yield ("min_distances 300x3000",
           lambda: kernels._min_distances_kernel(pts, ref),
           lambda: kernels.min_distances_numpy(pts, ref))

    # Adam over a flat parameter vector of the default training width
    flat = [rng.normal(size=358_000) for _ in range(3)] + [rng.random(358_000)]
    hyper = (1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)
    yield ("adam 358k params",
           lambda: kernels._adam_kernel(*flat, *hyper),
           lambda: kernels.adam_numpy(*flat, *hyper))

    # Hungarian has no vectorised twin; the fallback is the same body run as Python.
    cost = rng.uniform(size=(40, 40))
    yield ("hungarian 40x40",
           lambda: kernels._hungarian_kernel(cost),
           lambda: kernels._hungarian_kernel.py_func(cost))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not USE_NUMBA:
        print("numba disabled: both columns time the fallback path")
    print(f"{'kernel':32s} {'numba ms':>10s} {'fallback ms':>12s} {'speedup':>8s}")
    for name, fast, slow in cases(np.random.default_rng(args.seed)):
        a = best_of(fast, args.repeat) * 1e3
        b = best_of(slow, args.repeat) * 1e3
        print(f"{name:32s} {a:10.3f} {b:12.3f} {b / a:8.1f}x")


if __name__ == "__main__":
    main()
