"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best-of-``repeat`` wall time per call for both
backends, their ratio, and whether the two results are identical.
"""
import argparse
import timeit

import numpy as np

from maskpoint import _kernels_py

try:
    from maskpoint import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    cloud = rng.standard_normal((2048, 3))
    centers = cloud[:64].copy()
    queries = rng.uniform(-2, 2, (4096, 3))
    x32 = rng.standard_normal((2048, 64)).astype(np.float32)
    w32 = rng.standard_normal((64, 256)).astype(np.float32)
    return [
        ("fps 2048->64", "fps", (cloud, 64, 0)),
        ("knn 64x32 of 2048", "knn", (cloud, centers, 32)),
        ("nearest 4096 vs 2048", "nearest_sq_dist", (queries, cloud)),
        ("min_pairwise 512", "min_pairwise_sq", (cloud[:512].copy(),)),
        ("row_matmul f32 2048x64x256", "row_matmul", (x32, w32)),
    ]


def best_time(fn, args, repeat):
    n, _ = timeit.Timer(lambda: fn(*args)).autorange()
    return min(timeit.repeat(lambda: fn(*args), number=n, repeat=repeat)) / n


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if _kernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':28s} {'compiled':>12s} {'python':>12s} {'speedup':>8s}  identical")
    for label, name, call_args in cases(rng):
        fast, slow = getattr(_kernels, name), getattr(_kernels_py, name)
        same = np.array_equal(np.asarray(fast(*call_args)), np.asarray(slow(*call_args)))
        t_fast = best_time(fast, call_args, args.repeat)
        t_slow = best_time(slow, call_args, args.repeat)
        print(f"{label:28s} {t_fast * 1e3:10.3f}ms {t_slow * 1e3:10.3f}ms {t_slow / t_fast:7.1f}x  {same}")


if __name__ == "__main__":
    main()
