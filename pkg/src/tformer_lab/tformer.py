"""Question-guided temporal querying transformer.

Pipeline per video: sample k frames' token blocks as temporal queries, prepend
nothing to frames but add learnable per-frame timestamp embeddings to the frame
tokens, then run `layers` blocks of

    self-attention over [temporal queries ; question tokens]   (contextualize)
    cross-attention from that sequence onto all frame tokens   (cross_attend)
    position-wise feed-forward bottleneck

each sub-block post-layer-norm with a residual. After the last block the
question rows are dropped and the surviving k·t_f rows are projected to the
reasoner dimension. Cross-attention weights from every layer are retained for
inspection and export.

Order information reaches the output only through the timestamp table: the
queries carry no positional signal, and attention itself is order-blind. With
timestamps disabled the output is a pure set function of the frames (up to the
documented query-row ordering by ascending source frame).

All forward paths accept a leading batch axis; the spec-level single-video ops
wrap the batched path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .layers import ConfigError, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .rng import SeededRng
from .sampler import (FrameTokenSequence, SamplingStrategy, TemporalQuerySet,
                      init_temporal_queries, learnable_queries, select_indices)


@dataclass
class TFormerConfig:
    d: int
    t_f: int
    k: int
    n_max: int
    d_out: int
    layers: int = 2
    heads: int = 12
    ffn_dim: int = 768
    use_question_guidance: bool = True
    use_timestamps: bool = True
    tied_qkv: bool = False

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if not 1 <= self.k <= self.n_max:
            raise ConfigError(f"need 1 <= k <= n_max, got k={self.k}, n_max={self.n_max}")
        if min(self.t_f, self.d_out, self.ffn_dim) < 1:
            raise ConfigError("t_f, d_out, ffn_dim must be positive")


@dataclass
class QuestionTokens:
    """Question token ids plus their embeddings from the shared vocab table."""

    token_ids: np.ndarray
    embeddings: Tensor


@dataclass
class VisualSummary:
    """Fixed-size token block handed to the reasoner, with retained maps.

    tokens has k·t_f rows regardless of the input frame count (the compression
    contract); cross_attn_maps holds one array per layer, shaped
    [..., heads, L_q_total, n·t_f].
    """

    tokens: Tensor
    cross_attn_maps: list[np.ndarray] = field(default_factory=list)
    source_frames: list[list[int]] = field(default_factory=list)
    n: int = 0
    t_f: int = 0


class TimestampTable(Module):
    """One learnable d-vector per absolute frame position, added to every token
    of that frame. Videos shorter than n_max use a prefix of the table."""

    def __init__(self, n_max: int, d: int, rng: SeededRng):
        super().__init__()
        self.n_max = n_max
        # Same coordinate scale as typical frame features so position content
        # is visible to cross-attention from the first step.
        self.table = Parameter(rng.normal((n_max, d), scale=1.0 / math.sqrt(d)))


def add_timestamps(frames, ts: TimestampTable, enabled: bool) -> Tensor:
    """Flatten [..., n, t_f, d] frame tokens to [..., n*t_f, d], adding frame
    i's timestamp embedding to each of its tokens. Identity (reshape only)
    when disabled."""
    if isinstance(frames, FrameTokenSequence):
        frames = frames.tokens
    x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=np.float64))
    *lead, n, t_f, d = x.data.shape
    if n > ts.n_max:
        raise ConfigError(f"{n} frames exceeds timestamp table capacity {ts.n_max}")
    if enabled:
        stamps = ad.reshape(ad.take(ts.table, slice(0, n)), (n, 1, d))
        x = ad.add(x, stamps)
    return ad.reshape(x, tuple(lead) + (n * t_f, d))


class TFormerLayer(Module):
    def __init__(self, cfg: TFormerConfig, rng: SeededRng):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d, cfg.heads, rng.child("self"),
                                            tied_qkv=cfg.tied_qkv)
        self.self_norm = LayerNorm(cfg.d)
        self.cross_attn = MultiHeadAttention(cfg.d, cfg.heads, rng.child("cross"),
                                             tied_qkv=cfg.tied_qkv)
        self.cross_norm = LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, cfg.ffn_dim, rng.child("ffn"))
        self.ffn_norm = LayerNorm(cfg.d)

    def self_block(self, q: Tensor) -> Tensor:
        h, _ = self.self_attn(q)
        return self.self_norm(ad.add(q, h))

    def cross_block(self, q: Tensor, keys: Tensor) -> tuple[Tensor, Tensor]:
        h, weights = self.cross_attn(q, keys)
        return self.cross_norm(ad.add(q, h)), weights

    def ffn_block(self, q: Tensor) -> Tensor:
        return self.ffn_norm(ad.add(q, self.ffn(q)))


def _as_query_tensor(queries) -> Tensor:
    if isinstance(queries, TemporalQuerySet):
        return queries.queries
    return (queries if isinstance(queries, Tensor)
            else Tensor(np.asarray(queries, dtype=np.float64)))


def contextualize(queries, question, layer: TFormerLayer) -> Tensor:
    """Self-attention sub-block over [temporal queries ; question tokens].

    ``question`` is None when question guidance is off (and for layers past
    the first, whose input sequence already carries the question rows)."""
    q = _as_query_tensor(queries)
    if question is not None:
        emb = question.embeddings if isinstance(question, QuestionTokens) else question
        if q.data.shape[-1] != emb.data.shape[-1]:
            raise ConfigError(
                f"query dim {q.data.shape[-1]} != question dim {emb.data.shape[-1]}")
        q = ad.concat([q, emb], axis=-2)
    return layer.self_block(q)


def cross_attend(q: Tensor, frames_ts: Tensor, layer: TFormerLayer) -> tuple[Tensor, Tensor]:
    """Cross-attention sub-block: queries from q, keys/values from the
    timestamped frame tokens. Returns (output, attention weights)."""
    if q.data.shape[-1] != frames_ts.data.shape[-1]:
        raise ConfigError(
            f"query dim {q.data.shape[-1]} != frame dim {frames_ts.data.shape[-1]}")
    return layer.cross_block(q, frames_ts)


class TFormer(Module):
    """The full temporal querying stack. ``strategy`` is one of the sampling
    strategy names, a SamplingStrategy, or 'learnable' for trainable queries."""

    def __init__(self, cfg: TFormerConfig, rng: SeededRng, strategy="kmedoids"):
        super().__init__()
        self.cfg = cfg
        if strategy == "learnable":
            self.strategy = "learnable"
            qs = learnable_queries(cfg.k, cfg.t_f, cfg.d, rng.child("queries"))
            self.learned_queries = qs.queries
        else:
            self.strategy = (strategy if isinstance(strategy, SamplingStrategy)
                             else SamplingStrategy(strategy))
            self.learned_queries = None
        self.timestamps = TimestampTable(cfg.n_max, cfg.d, rng.child("timestamps"))
        # Frame tokens enter cross-attention raw, at a much smaller scale than
        # the normalized query stream; without this norm the attention logits
        # start so flat that every query reads the same global mixture.
        self.frame_norm = LayerNorm(cfg.d)
        self.blocks = [TFormerLayer(cfg, rng.child(f"layer{i}"))
                       for i in range(cfg.layers)]
        self.out_proj = Linear(cfg.d, cfg.d_out, rng.child("out_proj"))
        if cfg.d_out != cfg.d:
            self.question_adapter = Linear(cfg.d_out, cfg.d, rng.child("adapter"))
        else:
            self.question_adapter = None

    def sample_queries_batch(self, frames_batch: np.ndarray,
                             rng: SeededRng | None) -> tuple[Tensor, list[list[int]]]:
        """Per-sample temporal query blocks for a [B, n, t_f, d] batch."""
        b, n, t_f, d = frames_batch.shape
        k = self.cfg.k
        if self.strategy == "learnable":
            return ad.repeat_axis(self.learned_queries, 0, b), [[] for _ in range(b)]
        blocks = np.empty((b, k * t_f, d))
        sources = []
        for i in range(b):
            idx = select_indices(FrameTokenSequence(frames_batch[i]),
                                 self.strategy, k, rng)
            blocks[i] = frames_batch[i, idx].reshape(k * t_f, d)
            sources.append([int(j) for j in idx])
        return Tensor(blocks), sources

    def forward_batch(self, frames_batch: np.ndarray, question: QuestionTokens | None,
                      rng: SeededRng | None = None) -> VisualSummary:
        cfg = self.cfg
        b, n, t_f, d = frames_batch.shape
        if t_f != cfg.t_f or d != cfg.d:
            raise ConfigError(
                f"frames [{n}, {t_f}, {d}] do not match config t_f={cfg.t_f}, d={cfg.d}")
        if cfg.k > n:
            raise ConfigError(f"k={cfg.k} exceeds frame count n={n}")

        queries, sources = self.sample_queries_batch(frames_batch, rng)
        guidance = None
        if cfg.use_question_guidance and question is not None:
            emb = question.embeddings
            if self.question_adapter is not None:
                emb = self.question_adapter(emb)
            guidance = emb
        keys = self.frame_norm(
            add_timestamps(frames_batch, self.timestamps, cfg.use_timestamps))

        maps = []
        q = contextualize(queries, guidance, self.blocks[0])
        q, w = cross_attend(q, keys, self.blocks[0])
        maps.append(w.data)
        q = self.blocks[0].ffn_block(q)
        for layer in self.blocks[1:]:
            q = contextualize(q, None, layer)
            q, w = cross_attend(q, keys, layer)
            maps.append(w.data)
            q = layer.ffn_block(q)

        lead = (slice(None),) * (q.data.ndim - 2)
        kept = ad.take(q, lead + (slice(0, cfg.k * cfg.t_f), slice(None)))
        tokens = self.out_proj(kept)
        return VisualSummary(tokens, maps, sources, n=n, t_f=t_f)


def tformer_forward(frames: FrameTokenSequence, question: QuestionTokens | None,
                    cfg: TFormerConfig, params: TFormer, strategy=None,
                    rng: SeededRng | None = None) -> VisualSummary:
    """Single-video entry point; ``params`` carries the weights and (unless
    overridden here) the sampling strategy."""
    if cfg is not params.cfg and cfg != params.cfg:
        raise ConfigError("params were built for a different config")
    if strategy is not None:
        asked = strategy.name if isinstance(strategy, SamplingStrategy) else str(strategy)
        have = (params.strategy if isinstance(params.strategy, str)
                else params.strategy.name)
        if asked != have:
            raise ConfigError(
                f"params were built with strategy {have!r}, asked {asked!r}")
    emb = question
    if question is not None and question.embeddings.data.ndim == 2:
        emb = QuestionTokens(question.token_ids,
                             ad.reshape(question.embeddings,
                                        (1,) + question.embeddings.data.shape))
    out = params.forward_batch(frames.tokens[None], emb, rng)
    flat = ad.reshape(out.tokens, out.tokens.data.shape[1:])
    return VisualSummary(flat, [m[0] for m in out.cross_attn_maps],
                         out.source_frames, n=out.n, t_f=out.t_f)


def export_attention_maps(summary: VisualSummary, frame_granularity: bool = True) -> np.ndarray:
    """Average the retained cross-attention maps over layers and heads.

    With ``frame_granularity`` the per-token columns are summed within each
    frame's t_f tokens, giving [..., L_q_total, n] rows that still sum to 1.
    """
    if not summary.cross_attn_maps:
        raise ValueError("summary retains no attention maps")
    stacked = np.stack(summary.cross_attn_maps)          # [layers, ..., H, L, n*t_f]
    mean = stacked.mean(axis=0).mean(axis=-3)            # [..., L, n*t_f]
    if not frame_granularity:
        return mean
    shape = mean.shape[:-1] + (summary.n, summary.t_f)
    return mean.reshape(shape).sum(axis=-1)
