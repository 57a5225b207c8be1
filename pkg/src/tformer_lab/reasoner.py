"""Desk-scale answer reasoner standing in for the frozen language model.

For each answer option the reasoner encodes

    [ visual summary tokens | question tokens | option tokens ]

with a small post-layer-norm transformer encoder, mean-pools the final states,
and maps them to a scalar logit; options share all parameters, so logits are
equivariant under option permutation.

Positional embeddings are added to the text segment only. Visual summary
tokens enter as an unordered set: any temporal-order information must arrive
through their content (i.e. the upstream timestamp embeddings), never through
their position in the sequence. Two learnable segment vectors mark visual
versus text rows. The reasoner sees only (summary, question, options), never
raw frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .layers import ConfigError, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .rng import SeededRng
from .tformer import QuestionTokens, VisualSummary


@dataclass
class ReasonerConfig:
    d: int
    heads: int
    max_len: int
    layers: int = 2
    ffn_dim: int = 0  # 0 means 4*d

    def __post_init__(self):
        if self.ffn_dim == 0:
            self.ffn_dim = 4 * self.d
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if self.layers < 1 or self.max_len < 2 or self.ffn_dim < 1:
            raise ConfigError(
                f"bad reasoner config: layers={self.layers}, max_len={self.max_len}, "
                f"ffn_dim={self.ffn_dim}")


class Vocab(Module):
    def __init__(self, size: int, d: int, rng: SeededRng):
        super().__init__()
        if size < 1:
            raise ConfigError(f"vocab size must be positive, got {size}")
        self.size = size
        # Unit-variance coordinates so token identity is visible to first-layer
        # attention; option scoring relies on the option token steering routing.
        self.embedding = Parameter(rng.normal((size, d), scale=1.0))


def embed_tokens(ids, vocab: Vocab) -> Tensor:
    """Trainable table lookup; rejects out-of-vocabulary ids."""
    return ad.gather_rows(vocab.embedding, np.asarray(ids, dtype=np.int64))


@dataclass
class AnswerSet:
    options: list[list[int]]
    gold: int

    def __post_init__(self):
        if not 2 <= len(self.options) <= 5:
            raise ValueError(f"need 2 to 5 options, got {len(self.options)}")
        if not 0 <= self.gold < len(self.options):
            raise ValueError(f"gold index {self.gold} outside {len(self.options)} options")
        if any(len(o) < 1 for o in self.options):
            raise ValueError("every option needs at least one token")


class ReasonerLayer(Module):
    def __init__(self, cfg: ReasonerConfig, rng: SeededRng):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.d, cfg.heads, rng.child("attn"))
        self.attn_norm = LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, cfg.ffn_dim, rng.child("ffn"))
        self.ffn_norm = LayerNorm(cfg.d)

    def __call__(self, x: Tensor) -> Tensor:
        h, _ = self.attn(x)
        x = self.attn_norm(ad.add(x, h))
        return self.ffn_norm(ad.add(x, self.ffn(x)))


class Reasoner(Module):
    def __init__(self, cfg: ReasonerConfig, vocab_size: int, rng: SeededRng):
        super().__init__()
        self.cfg = cfg
        self.vocab = Vocab(vocab_size, cfg.d, rng.child("vocab"))
        pos_scale = 1.0 / math.sqrt(cfg.d)
        self.text_positions = Parameter(
            rng.normal((cfg.max_len, cfg.d), scale=pos_scale))
        self.seg_visual = Parameter(rng.normal((cfg.d,), scale=pos_scale))
        self.seg_text = Parameter(rng.normal((cfg.d,), scale=pos_scale))
        self.blocks = [ReasonerLayer(cfg, rng.child(f"layer{i}"))
                       for i in range(cfg.layers)]
        self.head = Linear(cfg.d, 1, rng.child("head"))

    def score_batch(self, summary_tokens: Tensor, question_ids: np.ndarray,
                    option_ids: np.ndarray) -> Tensor:
        """Logits [B, A] for summary [B, S, d], questions [B, l_q], options
        [B, A, l_o]."""
        b, s, d = summary_tokens.data.shape
        question_ids = np.asarray(question_ids, dtype=np.int64)
        option_ids = np.asarray(option_ids, dtype=np.int64)
        n_opt = option_ids.shape[1]
        text_ids = np.concatenate(
            [np.repeat(question_ids[:, None, :], n_opt, axis=1), option_ids], axis=2)
        t = text_ids.shape[2]
        if s + t > self.cfg.max_len:
            raise ValueError(
                f"sequence of {s} summary + {t} text tokens exceeds max_len="
                f"{self.cfg.max_len}")

        text = embed_tokens(text_ids, self.vocab)
        text = ad.add(text, ad.take(self.text_positions, slice(0, t)))
        text = ad.add(text, self.seg_text)
        vis = ad.repeat_axis(summary_tokens, 1, n_opt)
        vis = ad.add(vis, self.seg_visual)
        seq = ad.concat([vis, text], axis=-2)
        for block in self.blocks:
            seq = block(seq)
        pooled = ad.tensor_mean(seq, axis=-2)
        return ad.reshape(self.head(pooled), (b, n_opt))


def score_answers(summary: VisualSummary, question: QuestionTokens,
                  answers: AnswerSet, params: Reasoner) -> Tensor:
    """Single-sample logits [|A|]; options must share one token length."""
    lengths = {len(o) for o in answers.options}
    if len(lengths) != 1:
        raise ValueError(f"options must have equal length, got {sorted(lengths)}")
    tokens = summary.tokens
    if tokens.data.ndim == 2:
        tokens = ad.reshape(tokens, (1,) + tokens.data.shape)
    ids = np.asarray(question.token_ids, dtype=np.int64).reshape(1, -1)
    opts = np.asarray(answers.options, dtype=np.int64)[None]
    return ad.reshape(params.score_batch(tokens, ids, opts), (len(answers.options),))


def predict(logits) -> int:
    """Argmax with ties to the lowest index; shift-invariant."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if arr.size == 0:
        raise ValueError("empty logits")
    return int(np.argmax(arr))


def qa_loss(logits: Tensor, gold) -> Tensor:
    return ad.cross_entropy(logits, gold)
