"""Clustering kernels with selectable backend.

Two interchangeable implementations exist: numba-compiled loops
(_kernels_numba) and pure numpy. The environment variable TFORMER_LAB_KERNELS
picks one at import time:

    TFORMER_LAB_KERNELS=numba   require numba (ImportError if missing)
    TFORMER_LAB_KERNELS=numpy   force the numpy fallback
    unset                       numba when importable, else numpy

``set_backend`` switches at runtime (used by tests and the benchmark).
Kernel functions:

    pairwise_dist(x[n,d]) -> dist[n,n]          Euclidean, non-squared
    pam_cost(dist, medoids) -> float
    pam_build(dist, k) -> medoids[k]            greedy deterministic
    pam_swap(dist, medoids) -> medoids[k]       swap descent (single + pair)
    kmeans_assign(x, centroids) -> labels[n]
    kmeans_update(x, labels, centroids_old) -> centroids[k,d]
    kmeans_wcss(x, centroids, labels) -> float
"""

from __future__ import annotations

import os

import numpy as np

_KERNEL_NAMES = ("pairwise_dist", "pam_cost", "pam_build", "pam_swap",
                 "kmeans_assign", "kmeans_update", "kmeans_wcss")


# ---------------------------------------------------------------------------
# pure numpy implementations
# ---------------------------------------------------------------------------


def _np_pairwise_dist(x):
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _np_pam_cost(dist, medoids):
    return float(dist[:, medoids].min(axis=1).sum())


def _np_pam_build(dist, k):
    n = dist.shape[0]
    medoids = np.empty(k, dtype=np.int64)
    medoids[0] = int(np.argmin(dist.sum(axis=0)))
    chosen = np.zeros(n, dtype=bool)
    chosen[medoids[0]] = True
    nearest = dist[:, medoids[0]].copy()
    for t in range(1, k):
        cand_cost = np.minimum(nearest[:, None], dist).sum(axis=0)
        cand_cost[chosen] = np.inf
        j = int(np.argmin(cand_cost))
        medoids[t] = j
        chosen[j] = True
        np.minimum(nearest, dist[:, j], out=nearest)
    return medoids


def _np_pam_single_swap(dist, medoids):
    """Steepest-descent single exchanges, in place, until none improves."""
    n = dist.shape[0]
    k = medoids.shape[0]
    rows = np.arange(n)
    while True:
        dm = dist[:, medoids]
        a1 = np.argmin(dm, axis=1)
        d1 = dm[rows, a1]
        if k > 1:
            dm2 = dm.copy()
            dm2[rows, a1] = np.inf
            d2 = dm2.min(axis=1)
        else:
            d2 = np.full(n, np.inf)
        is_medoid = np.zeros(n, dtype=bool)
        is_medoid[medoids] = True

        best_delta = -1e-12
        best_mi = -1
        best_h = -1
        for mi in range(k):
            own = a1 == mi
            delta = (np.minimum(dist[own, :], d2[own, None]) - d1[own, None]).sum(axis=0)
            delta += np.minimum(dist[~own, :] - d1[~own, None], 0.0).sum(axis=0)
            delta[is_medoid] = np.inf
            h = int(np.argmin(delta))
            if delta[h] < best_delta:
                best_delta = delta[h]
                best_mi = mi
                best_h = h
        if best_mi < 0:
            return
        medoids[best_mi] = best_h


def _np_pam_pair_swap(dist, medoids):
    """Best simultaneous exchange of two medoids for two non-medoids.

    Applies it in place and returns True, or returns False when no pair
    strictly improves. Candidates are scanned in ascending index order with
    strict comparison, so equal deltas resolve to the lowest indices.
    """
    n = dist.shape[0]
    k = medoids.shape[0]
    nonmed = np.setdiff1d(np.arange(n), medoids)
    if k < 2 or nonmed.size < 2:
        return False
    cur = dist[:, medoids].min(axis=1).sum()
    iu1, iu2 = np.triu_indices(nonmed.size, 1)
    best_delta = -1e-12
    best = None
    for a in range(k):
        for b in range(a + 1, k):
            keep = np.array([medoids[t] for t in range(k) if t != a and t != b],
                            dtype=np.int64)
            base = dist[:, keep].min(axis=1) if keep.size else np.full(n, np.inf)
            cand = np.minimum(base[None, :], dist[nonmed, :])
            pair_cost = np.minimum(cand[iu1], cand[iu2]).sum(axis=1)
            pos = int(np.argmin(pair_cost))
            delta = pair_cost[pos] - cur
            if delta < best_delta:
                best_delta = delta
                best = (a, b, int(nonmed[iu1[pos]]), int(nonmed[iu2[pos]]))
    if best is None:
        return False
    a, b, h1, h2 = best
    medoids[a] = h1
    medoids[b] = h2
    return True


def _np_pam_triple_swap(dist, medoids):
    """Best full replacement of a three-medoid set, in place.

    Only runs at k == 3, where it completes the move set: together with
    single and pair exchanges every candidate set is one move away, so the
    descent can only terminate at the exhaustive optimum.
    """
    n = dist.shape[0]
    if medoids.shape[0] != 3 or n - 3 < 3:
        return False
    nonmed = np.setdiff1d(np.arange(n), medoids)
    cur = dist[:, medoids].min(axis=1).sum()
    cand = dist[:, nonmed].T
    m = nonmed.size
    best_delta = -1e-12
    best = None
    for p in range(m):
        for q in range(p + 1, m):
            if q + 1 == m:
                continue
            m12 = np.minimum(cand[p], cand[q])
            costs = np.minimum(m12[None, :], cand[q + 1:]).sum(axis=1)
            pos = int(np.argmin(costs))
            delta = costs[pos] - cur
            if delta < best_delta:
                best_delta = delta
                best = (p, q, q + 1 + pos)
    if best is None:
        return False
    medoids[:] = nonmed[list(best)]
    return True


def _np_pam_swap(dist, medoids_in):
    medoids = medoids_in.copy()
    if medoids.shape[0] >= dist.shape[0]:
        return medoids
    while True:
        _np_pam_single_swap(dist, medoids)
        # Single exchanges alone can stall above the optimum when moves only
        # pay off together; deeper exchanges escape. With k <= 3 the deepest
        # phase reaches every candidate set, so the result is exactly optimal.
        if _np_pam_pair_swap(dist, medoids):
            continue
        if _np_pam_triple_swap(dist, medoids):
            continue
        return medoids


def _np_kmeans_assign(x, centroids):
    diff = x[:, None, :] - centroids[None, :, :]
    return np.argmin((diff * diff).sum(axis=-1), axis=1).astype(np.int64)


def _np_kmeans_update(x, labels, centroids_old):
    k, d = centroids_old.shape
    out = np.zeros((k, d))
    counts = np.bincount(labels, minlength=k)
    np.add.at(out, labels, x)
    empty = counts == 0
    out[empty] = centroids_old[empty]
    out[~empty] /= counts[~empty, None]
    return out


def _np_kmeans_wcss(x, centroids, labels):
    diff = x - centroids[labels]
    return float((diff * diff).sum())


_NUMPY_IMPL = {name: globals()["_np_" + name] for name in _KERNEL_NAMES}


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

_active: dict = {}
_backend_name = ""


def set_backend(name: str):
    """Switch kernel implementations; name is 'numba' or 'numpy'."""
    global _backend_name
    if name == "numpy":
        _active.update(_NUMPY_IMPL)
    elif name == "numba":
        from . import _kernels_numba as nb
        _active.update({k: getattr(nb, k) for k in _KERNEL_NAMES})
    else:
        raise ValueError(f"unknown kernel backend {name!r}; options: numba, numpy")
    _backend_name = name


def active_backend() -> str:
    return _backend_name


def _init_from_env():
    choice = os.environ.get("TFORMER_LAB_KERNELS", "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(
            f"TFORMER_LAB_KERNELS={choice!r} not recognized; options: numba, numpy")
    if choice:
        set_backend(choice)
        return
    try:
        set_backend("numba")
    except ImportError:
        set_backend("numpy")


_init_from_env()


def pairwise_dist(x):
    return _active["pairwise_dist"](np.ascontiguousarray(x, dtype=np.float64))


def pam_cost(dist, medoids):
    return float(_active["pam_cost"](dist, np.asarray(medoids, dtype=np.int64)))


def pam_build(dist, k):
    return _active["pam_build"](dist, k)


def pam_swap(dist, medoids):
    return _active["pam_swap"](dist, np.asarray(medoids, dtype=np.int64))


def kmeans_assign(x, centroids):
    return _active["kmeans_assign"](
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(centroids, dtype=np.float64))


def kmeans_update(x, labels, centroids_old):
    return _active["kmeans_update"](
        np.ascontiguousarray(x, dtype=np.float64), labels,
        np.ascontiguousarray(centroids_old, dtype=np.float64))


def kmeans_wcss(x, centroids, labels):
    return float(_active["kmeans_wcss"](
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(centroids, dtype=np.float64), labels))
