"""Temporal query initialization: pick k of n frames whose token blocks seed
the compression queries.

Four strategies: evenly spaced, random without replacement, k-means (Lloyd's
with k-means++ seeding, centroids snapped to real frames), and k-medoids (PAM,
fully deterministic). Clustering operates on per-frame mean descriptors; the
selected frames' full token blocks become the queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autodiff import Parameter, Tensor
from .rng import SeededRng

STRATEGY_NAMES = ("uniform", "random", "kmeans", "kmedoids")


@dataclass
class FrameTokenSequence:
    """One video: n frames of t_f tokens, each d-dimensional."""

    tokens: np.ndarray

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        if self.tokens.ndim != 3:
            raise ValueError(f"expected [n, t_f, d] tokens, got shape {self.tokens.shape}")
        if min(self.tokens.shape) < 1:
            raise ValueError(f"empty axis in frame tokens: {self.tokens.shape}")
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError("frame tokens contain non-finite values")

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def t_f(self) -> int:
        return self.tokens.shape[1]

    @property
    def d(self) -> int:
        return self.tokens.shape[2]


@dataclass
class FrameDescriptor:
    """One vector per frame: the mean of its t_f tokens."""

    desc: np.ndarray


def frame_descriptors(frames: FrameTokenSequence) -> FrameDescriptor:
    return FrameDescriptor(frames.tokens.mean(axis=1))


@dataclass(frozen=True)
class SamplingStrategy:
    name: str
    kmeans_iters: int = 20

    def __post_init__(self):
        if self.name not in STRATEGY_NAMES:
            raise ValueError(
                f"unknown strategy {self.name!r}; options: {', '.join(STRATEGY_NAMES)}")
        if self.kmeans_iters < 1:
            raise ValueError(f"kmeans_iters must be >= 1, got {self.kmeans_iters}")


@dataclass
class TemporalQuerySet:
    """k·t_f query tokens plus the frame indices they came from (empty for
    learnable queries)."""

    queries: Tensor
    source_frames: list[int] = field(default_factory=list)

    def __post_init__(self):
        sf = [int(i) for i in self.source_frames]
        if any(b <= a for a, b in zip(sf, sf[1:])):
            raise ValueError(f"source frames not strictly increasing: {sf}")
        self.source_frames = sf


def _desc_array(desc) -> np.ndarray:
    arr = desc.desc if isinstance(desc, FrameDescriptor) else np.asarray(desc)
    return np.ascontiguousarray(arr, dtype=np.float64)


def _check_k(n: int, k: int):
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")


def uniform_indices(n: int, k: int) -> np.ndarray:
    """Evenly spaced frame picks: index_i = floor((i + 0.5) * n / k)."""
    _check_k(n, k)
    # Integer form of floor((i + 0.5) * n / k); exact, no float rounding.
    return (2 * np.arange(k, dtype=np.int64) + 1) * n // (2 * k)


def random_indices(n: int, k: int, rng: SeededRng) -> np.ndarray:
    _check_k(n, k)
    return np.sort(rng.choice_without_replacement(n, k).astype(np.int64))


def kmedoids_indices(desc, k: int) -> np.ndarray:
    """PAM: greedy build then swap descent (single and deeper exchange moves);
    no randomness, ties to the lowest index. Exact for k <= 3."""
    x = _desc_array(desc)
    _check_k(x.shape[0], k)
    dist = kernels.pairwise_dist(x)
    medoids = kernels.pam_swap(dist, kernels.pam_build(dist, k))
    return np.sort(medoids)


def _nearest_unused_rows(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Snap each centroid to its nearest data row, skipping rows already taken
    (nearest unused wins; ties to the lowest index)."""
    picked = []
    used = set()
    for c in centroids:
        d2 = ((x - c) ** 2).sum(axis=1)
        for idx in np.argsort(d2, kind="stable"):
            if int(idx) not in used:
                picked.append(int(idx))
                used.add(int(idx))
                break
    return np.sort(np.asarray(picked, dtype=np.int64))


def kmeans_indices(desc, k: int, iters: int, rng: SeededRng) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding, then snap centroids to frames."""
    x = _desc_array(desc)
    n = x.shape[0]
    _check_k(n, k)
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")

    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for t in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # All remaining mass sits on chosen points; take the lowest new row.
            idx = int(np.setdiff1d(np.arange(n), _nearest_unused_rows(x, centroids[:t]))[0])
        else:
            u = float(rng.uniform()) * total
            idx = int(np.searchsorted(np.cumsum(d2), u, side="right").clip(0, n - 1))
        centroids[t] = x[idx]
        np.minimum(d2, ((x - centroids[t]) ** 2).sum(axis=1), out=d2)

    labels = kernels.kmeans_assign(x, centroids)
    prev = kernels.kmeans_wcss(x, centroids, labels)
    for _ in range(iters):
        centroids = kernels.kmeans_update(x, labels, centroids)
        new_labels = kernels.kmeans_assign(x, centroids)
        wcss = kernels.kmeans_wcss(x, centroids, new_labels)
        if wcss > prev + 1e-9:
            raise RuntimeError(
                f"within-cluster sum of squares increased: {prev} -> {wcss}")
        converged = np.array_equal(new_labels, labels)
        labels, prev = new_labels, wcss
        if converged:
            break
    return _nearest_unused_rows(x, centroids)


def select_indices(frames: FrameTokenSequence, strategy: SamplingStrategy,
                   k: int, rng: SeededRng | None) -> np.ndarray:
    desc = frame_descriptors(frames)
    if strategy.name == "uniform":
        return uniform_indices(frames.n, k)
    if strategy.name == "random":
        return random_indices(frames.n, k, rng)
    if strategy.name == "kmeans":
        return kmeans_indices(desc, k, strategy.kmeans_iters, rng)
    return kmedoids_indices(desc, k)


def init_temporal_queries(frames: FrameTokenSequence, strategy: SamplingStrategy,
                          k: int, rng: SeededRng | None = None) -> TemporalQuerySet:
    """Sample k frames per the strategy and lift their full token blocks, in
    ascending frame order, into the query set (exact copies at init)."""
    indices = select_indices(frames, strategy, k, rng)
    block = frames.tokens[indices].reshape(k * frames.t_f, frames.d).copy()
    return TemporalQuerySet(Tensor(block), [int(i) for i in indices])


def learnable_queries(k: int, t_f: int, d: int, rng: SeededRng) -> TemporalQuerySet:
    """Trainable query block used by the ablation harness instead of sampling."""
    if min(k, t_f, d) < 1:
        raise ValueError(f"dims must be positive, got k={k}, t_f={t_f}, d={d}")
    return TemporalQuerySet(Parameter(rng.normal((k * t_f, d), scale=0.02)), [])
