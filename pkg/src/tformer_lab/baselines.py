"""Competing temporal-aggregation baselines.

Each baseline turns a frame batch into the same VisualSummary interface the
reasoner consumes, differing only in how frames are aggregated; every kind owns
an output projection of the same shape so accuracy differences isolate the
aggregation strategy.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Linear, Module
from .rng import SeededRng
from .sampler import FrameTokenSequence
from .tformer import TFormer, TFormerConfig, VisualSummary

BASELINE_KINDS = ("single", "concat", "meanpool", "spatiotemporal")


def _frames_array(frames) -> np.ndarray:
    arr = frames.tokens if isinstance(frames, FrameTokenSequence) else np.asarray(frames)
    if arr.ndim == 3:
        arr = arr[None]
    return arr


class SingleFrame(Module):
    """One random frame's tokens, projected."""

    def __init__(self, d: int, d_out: int, rng: SeededRng):
        super().__init__()
        self.proj = Linear(d, d_out, rng.child("proj"))

    def forward_batch(self, frames_batch, rng: SeededRng,
                      question=None) -> VisualSummary:
        frames_batch = _frames_array(frames_batch)
        b, n, t_f, _ = frames_batch.shape
        picks = [rng.integers(n) for _ in range(b)]
        tokens = self.proj(Tensor(frames_batch[np.arange(b), picks]))
        return VisualSummary(tokens, [], [[p] for p in picks], n=n, t_f=t_f)


class ConcatFrames(Module):
    """All n*t_f tokens in input order, projected; no compression."""

    def __init__(self, d: int, d_out: int, max_tokens: int, rng: SeededRng):
        super().__init__()
        self.max_tokens = max_tokens
        self.proj = Linear(d, d_out, rng.child("proj"))

    def forward_batch(self, frames_batch, rng=None, question=None) -> VisualSummary:
        frames_batch = _frames_array(frames_batch)
        b, n, t_f, d = frames_batch.shape
        if n * t_f > self.max_tokens:
            raise ValueError(
                f"concat of {n}*{t_f}={n * t_f} tokens exceeds the limit of "
                f"{self.max_tokens}")
        tokens = self.proj(Tensor(frames_batch.reshape(b, n * t_f, d)))
        return VisualSummary(tokens, [], [list(range(n))] * b, n=n, t_f=t_f)


class MeanPool(Module):
    """Token-position-wise mean over frames.

    The mean is computed order-independently (addends sorted before summation),
    so any frame permutation yields a bitwise-identical summary.
    """

    def __init__(self, d: int, d_out: int, rng: SeededRng):
        super().__init__()
        self.proj = Linear(d, d_out, rng.child("proj"))

    def forward_batch(self, frames_batch, rng=None, question=None) -> VisualSummary:
        frames_batch = _frames_array(frames_batch)
        b, n, t_f, _ = frames_batch.shape
        pooled = ad.order_free_mean(Tensor(frames_batch), axis=1)
        return VisualSummary(self.proj(pooled), [], [[]] * b, n=n, t_f=t_f)


class ZeroSummary(Module):
    """Frame-blind control: the reasoner sees an all-zero visual summary, so
    its accuracy bounds what question/option statistics alone can achieve."""

    def __init__(self, tokens: int, d_out: int):
        super().__init__()
        self.tokens = tokens
        self.d_out = d_out

    def forward_batch(self, frames_batch, rng=None, question=None) -> VisualSummary:
        frames_batch = _frames_array(frames_batch)
        b, n, t_f, _ = frames_batch.shape
        zeros = Tensor(np.zeros((b, self.tokens, self.d_out)))
        return VisualSummary(zeros, [], [[]] * b, n=n, t_f=t_f)


def spatio_temporal(cfg: TFormerConfig, rng: SeededRng) -> TFormer:
    """Learnable-query variant: identical to the temporal-querying stack with
    strategy='learnable'; a distinct kind label for ablation bookkeeping."""
    return TFormer(cfg, rng, strategy="learnable")


def single_frame(frames, params: SingleFrame, rng: SeededRng) -> VisualSummary:
    return params.forward_batch(frames, rng)


def concat_frames(frames, params: ConcatFrames) -> VisualSummary:
    return params.forward_batch(frames)


def mean_pool(frames, params: MeanPool) -> VisualSummary:
    return params.forward_batch(frames)
