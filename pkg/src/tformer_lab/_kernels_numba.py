"""Numba-compiled clustering kernels.

Import of this module requires numba; kernels.py falls back to the pure-numpy
implementations when it is missing or when TFORMER_LAB_KERNELS=numpy.

These are the only numerics hot enough to matter outside BLAS: they run per
sample per training step inside the temporal-query samplers.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def pairwise_dist(x):
    """Euclidean (non-squared) distance matrix for rows of x [n, d]."""
    n, d = x.shape
    out = np.empty((n, n), dtype=np.float64)
    for i in range(n):
        out[i, i] = 0.0
        for j in range(i + 1, n):
            s = 0.0
            for t in range(d):
                diff = x[i, t] - x[j, t]
                s += diff * diff
            dd = math.sqrt(s)
            out[i, j] = dd
            out[j, i] = dd
    return out


@njit(cache=True)
def pam_cost(dist, medoids):
    n = dist.shape[0]
    total = 0.0
    for i in range(n):
        best = np.inf
        for m in medoids:
            if dist[i, m] < best:
                best = dist[i, m]
        total += best
    return total


@njit(cache=True)
def pam_build(dist, k):
    """Greedy BUILD: first medoid minimizes the column sum, then repeatedly add
    the point minimizing the resulting cost. Strict < comparisons break ties
    toward the lowest index."""
    n = dist.shape[0]
    medoids = np.empty(k, dtype=np.int64)
    chosen = np.zeros(n, dtype=np.bool_)

    best_j = 0
    best_cost = np.inf
    for j in range(n):
        s = 0.0
        for i in range(n):
            s += dist[i, j]
        if s < best_cost:
            best_cost = s
            best_j = j
    medoids[0] = best_j
    chosen[best_j] = True
    nearest = dist[:, best_j].copy()

    for t in range(1, k):
        best_j = -1
        best_cost = np.inf
        for c in range(n):
            if chosen[c]:
                continue
            cost = 0.0
            for i in range(n):
                dic = dist[i, c]
                cost += dic if dic < nearest[i] else nearest[i]
            if cost < best_cost:
                best_cost = cost
                best_j = c
        medoids[t] = best_j
        chosen[best_j] = True
        for i in range(n):
            if dist[i, best_j] < nearest[i]:
                nearest[i] = dist[i, best_j]
    return medoids


@njit(cache=True)
def _pam_single_swap(dist, medoids):
    """Steepest-descent single exchanges, in place, until none improves.

    Each pass evaluates every (medoid, non-medoid) exchange via the nearest /
    second-nearest distance trick and applies the single best one. Only strictly
    improving swaps (delta < -1e-12) are taken, so the loop terminates.
    """
    n = dist.shape[0]
    k = medoids.shape[0]

    d1 = np.empty(n, dtype=np.float64)
    d2 = np.empty(n, dtype=np.float64)
    a1 = np.empty(n, dtype=np.int64)
    is_medoid = np.zeros(n, dtype=np.bool_)

    while True:
        for i in range(n):
            is_medoid[i] = False
        for mi in range(k):
            is_medoid[medoids[mi]] = True
        for i in range(n):
            b1 = np.inf
            b2 = np.inf
            bi = -1
            for mi in range(k):
                dd = dist[i, medoids[mi]]
                if dd < b1:
                    b2 = b1
                    b1 = dd
                    bi = mi
                elif dd < b2:
                    b2 = dd
            d1[i] = b1
            d2[i] = b2
            a1[i] = bi

        best_delta = -1e-12
        best_mi = -1
        best_h = -1
        for mi in range(k):
            for h in range(n):
                if is_medoid[h]:
                    continue
                delta = 0.0
                for i in range(n):
                    dih = dist[i, h]
                    if a1[i] == mi:
                        repl = dih if dih < d2[i] else d2[i]
                        delta += repl - d1[i]
                    elif dih < d1[i]:
                        delta += dih - d1[i]
                if delta < best_delta:
                    best_delta = delta
                    best_mi = mi
                    best_h = h
        if best_mi < 0:
            return
        medoids[best_mi] = best_h


@njit(cache=True)
def _pam_pair_swap(dist, medoids):
    """Best simultaneous exchange of two medoids for two non-medoids.

    Applies it in place and returns True, or returns False when no pair
    strictly improves. Ascending scan order with strict comparison resolves
    equal deltas to the lowest indices.
    """
    n = dist.shape[0]
    k = medoids.shape[0]
    if k < 2 or n - k < 2:
        return False

    is_medoid = np.zeros(n, dtype=np.bool_)
    for mi in range(k):
        is_medoid[medoids[mi]] = True
    nonmed = np.empty(n - k, dtype=np.int64)
    p = 0
    for i in range(n):
        if not is_medoid[i]:
            nonmed[p] = i
            p += 1

    cur = pam_cost(dist, medoids)
    base = np.empty(n, dtype=np.float64)
    best_delta = -1e-12
    ba = -1
    bb = -1
    bh1 = -1
    bh2 = -1
    for a in range(k):
        for b in range(a + 1, k):
            for i in range(n):
                m = np.inf
                for t in range(k):
                    if t == a or t == b:
                        continue
                    dd = dist[i, medoids[t]]
                    if dd < m:
                        m = dd
                base[i] = m
            for p in range(n - k):
                h1 = nonmed[p]
                for q in range(p + 1, n - k):
                    h2 = nonmed[q]
                    s = 0.0
                    for i in range(n):
                        v = base[i]
                        if dist[i, h1] < v:
                            v = dist[i, h1]
                        if dist[i, h2] < v:
                            v = dist[i, h2]
                        s += v
                    if s - cur < best_delta:
                        best_delta = s - cur
                        ba = a
                        bb = b
                        bh1 = h1
                        bh2 = h2
    if ba < 0:
        return False
    medoids[ba] = bh1
    medoids[bb] = bh2
    return True


@njit(cache=True)
def _pam_triple_swap(dist, medoids):
    """Best full replacement of a three-medoid set, in place.

    Only runs at k == 3, where it completes the move set: together with
    single and pair exchanges every candidate set is one move away, so the
    descent can only terminate at the exhaustive optimum.
    """
    n = dist.shape[0]
    k = medoids.shape[0]
    if k != 3 or n - k < 3:
        return False

    is_medoid = np.zeros(n, dtype=np.bool_)
    for mi in range(k):
        is_medoid[medoids[mi]] = True
    nonmed = np.empty(n - k, dtype=np.int64)
    p = 0
    for i in range(n):
        if not is_medoid[i]:
            nonmed[p] = i
            p += 1

    cur = pam_cost(dist, medoids)
    m12 = np.empty(n, dtype=np.float64)
    best_delta = -1e-12
    bh1 = -1
    bh2 = -1
    bh3 = -1
    for p in range(n - k):
        h1 = nonmed[p]
        for q in range(p + 1, n - k):
            h2 = nonmed[q]
            for i in range(n):
                v = dist[i, h1]
                if dist[i, h2] < v:
                    v = dist[i, h2]
                m12[i] = v
            for r in range(q + 1, n - k):
                h3 = nonmed[r]
                s = 0.0
                for i in range(n):
                    v = m12[i]
                    if dist[i, h3] < v:
                        v = dist[i, h3]
                    s += v
                if s - cur < best_delta:
                    best_delta = s - cur
                    bh1 = h1
                    bh2 = h2
                    bh3 = h3
    if bh1 < 0:
        return False
    medoids[0] = bh1
    medoids[1] = bh2
    medoids[2] = bh3
    return True


@njit(cache=True)
def pam_swap(dist, medoids_in):
    """Swap descent: steepest single exchanges plus deeper escape moves.

    Single exchanges alone can stall above the optimum when moves only pay
    off together; pair exchanges (and at k == 3 the full-replacement move)
    escape, after which single exchanges resume. With k <= 3 the deepest
    phase reaches every candidate set, so the result is exactly optimal;
    for larger k this is the classical heuristic descent.
    """
    medoids = medoids_in.copy()
    if medoids.shape[0] >= dist.shape[0]:
        return medoids
    while True:
        _pam_single_swap(dist, medoids)
        if _pam_pair_swap(dist, medoids):
            continue
        if _pam_triple_swap(dist, medoids):
            continue
        return medoids


@njit(cache=True)
def kmeans_assign(x, centroids):
    """Label each row of x with the nearest centroid (squared Euclidean,
    lowest index on ties)."""
    n = x.shape[0]
    k = centroids.shape[0]
    d = x.shape[1]
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        bi = 0
        for c in range(k):
            s = 0.0
            for t in range(d):
                diff = x[i, t] - centroids[c, t]
                s += diff * diff
            if s < best:
                best = s
                bi = c
        labels[i] = bi
    return labels


@njit(cache=True)
def kmeans_update(x, labels, centroids_old):
    """Mean of each cluster; empty clusters keep their previous centroid."""
    k, d = centroids_old.shape
    n = x.shape[0]
    out = np.zeros((k, d), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        c = labels[i]
        counts[c] += 1
        for t in range(d):
            out[c, t] += x[i, t]
    for c in range(k):
        if counts[c] == 0:
            for t in range(d):
                out[c, t] = centroids_old[c, t]
        else:
            for t in range(d):
                out[c, t] /= counts[c]
    return out


@njit(cache=True)
def kmeans_wcss(x, centroids, labels):
    n, d = x.shape
    total = 0.0
    for i in range(n):
        c = labels[i]
        for t in range(d):
            diff = x[i, t] - centroids[c, t]
            total += diff * diff
    return total
