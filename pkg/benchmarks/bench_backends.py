#!/usr/bin/env python3
"""Compare the numba kernels against the pure-numpy fallback on the hot paths:
exact batch 1-NN, IVF search and k-means assignment.

Usage:
    python benchmarks/bench_backends.py [--queries 20000] [--refs 25000] [--dim 256]

The same kernels are what `NEARSUB_BACKEND=numba|numpy` selects at runtime.
"""

import argparse
import time

import numpy as np

from nearsub import _kernels_numba, _kernels_numpy
from nearsub.knn import _posting_lists, kmeans


def mixture(n, dim, components, rng, spread=5.0):
    centers = rng.standard_normal((components, dim)) * spread
    picks = rng.integers(0, components, n)
    return (centers[picks] + rng.standard_normal((n, dim))).astype(np.float32)


def best_of(fn, repeats=3):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--queries", type=int, default=20_000)
    parser.add_argument("--refs", type=int, default=25_000)
    parser.add_argument("--dim", type=int, default=256)
    parser.add_argument("--centroids", type=int, default=0, help="0 = ceil(sqrt(refs))")
    parser.add_argument("--nprobe", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    R = mixture(args.refs, args.dim, 100, rng)
    Q = mixture(args.queries, args.dim, 100, rng)
    c = args.centroids or int(np.ceil(np.sqrt(args.refs)))

    print(f"workload: {args.queries} queries x {args.refs} refs @ dim {args.dim}, "
          f"ivf c={c} nprobe={args.nprobe}")

    centroids, assign = kmeans(R, c, seed=0)
    offsets, rows = _posting_lists(assign, c)

    # warm the JIT before timing
    _kernels_numba.nearest_exact(Q[:64], R[:512])
    _kernels_numba.nearest_ivf(Q[:64], centroids, offsets, rows, R, args.nprobe)

    results = {}
    for label, kern in (("numba", _kernels_numba), ("numpy", _kernels_numpy)):
        t_exact, (idx_e, _) = best_of(lambda k=kern: k.nearest_exact(Q, R), args.repeats)
        t_ivf, (idx_i, _) = best_of(
            lambda k=kern: k.nearest_ivf(Q, centroids, offsets, rows, R, args.nprobe),
            args.repeats,
        )
        t_assign, _ = best_of(lambda k=kern: k.assign_nearest(Q, centroids), args.repeats)
        results[label] = (t_exact, t_ivf, t_assign, idx_e, idx_i)
        print(f"{label:>6}: exact {t_exact:8.3f}s   ivf {t_ivf:8.3f}s   assign {t_assign:8.3f}s")

    nb, npy = results["numba"], results["numpy"]
    agree_exact = float(np.mean(nb[3] == npy[3]))
    agree_ivf = float(np.mean(nb[4] == npy[4]))
    print(f"backend agreement: exact neighbors {agree_exact:.4f}, ivf neighbors {agree_ivf:.4f}")
    print(f"speedup numba/numpy: exact x{npy[0] / nb[0]:.2f}   ivf x{npy[1] / nb[1]:.2f}   "
          f"assign x{npy[2] / nb[2]:.2f}")


if __name__ == "__main__":
    main()
