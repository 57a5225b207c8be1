"""Compare the numba clustering kernels against the pure-numpy fallback.

Run from the repository root after installing the package:

    python3 benchmarks/bench_kernels.py

Times pairwise distances, a full PAM build+swap, and one Lloyd iteration on a
couple of problem sizes, once per backend. The first numba call includes JIT
compilation, so each benchmark does an untimed warmup pass first.
"""

from __future__ import annotations

import time

import numpy as np

from tformer_lab import kernels
from tformer_lab.rng import SeededRng


def _time(fn, repeats=5):
    fn()  # warmup (includes JIT compilation on the numba backend)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_backend(backend: str, sizes=(64, 256), d=32, k=8):
    kernels.set_backend(backend)
    rng = SeededRng(0)
    print(f"\nbackend = {kernels.active_backend()}")
    for n in sizes:
        points = rng.child(f"pts{n}").normal((n, d))
        dist = kernels.pairwise_dist(points)

        t_dist = _time(lambda: kernels.pairwise_dist(points))

        def pam():
            medoids = kernels.pam_build(dist, k)
            kernels.pam_swap(dist, medoids)

        t_pam = _time(pam)

        centroids = points[:k].copy()

        def lloyd():
            labels = kernels.kmeans_assign(points, centroids)
            kernels.kmeans_update(points, labels, k, centroids)
            kernels.kmeans_wcss(points, centroids, labels)

        t_lloyd = _time(lloyd)
        print(f"  n={n:4d}  pairwise {t_dist * 1e3:8.3f} ms   "
              f"pam {t_pam * 1e3:8.3f} ms   lloyd {t_lloyd * 1e3:8.3f} ms")


def main():
    for backend in ("numpy", "numba"):
        try:
            bench_backend(backend)
        except ValueError as exc:
            print(f"\nbackend = {backend}: skipped ({exc})")


if __name__ == "__main__":
    main()
