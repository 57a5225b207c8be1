"""Composite QA model: one visual aggregator plus the shared reasoner.

The reasoner never branches on the aggregator kind; every kind emits the same
VisualSummary interface. Question embeddings for the guided kinds come from
the reasoner's vocabulary table, so question tokens mean the same thing on
both sides.
"""

from __future__ import annotations

import numpy as np

from .baselines import ConcatFrames, MeanPool, SingleFrame, ZeroSummary, spatio_temporal
from .layers import ConfigError, Module
from .reasoner import Reasoner, ReasonerConfig, embed_tokens
from .rng import SeededRng
from .synthgen import TaskSpec
from .tformer import QuestionTokens, TFormer, TFormerConfig, VisualSummary

MODEL_KINDS = ("tformer", "single", "concat", "meanpool", "spatiotemporal", "blind")


def desk_configs(spec: TaskSpec, k: int | None = None, layers: int = 2,
                 heads: int = 4, ffn_dim: int = 64, d_out: int | None = None,
                 use_question_guidance: bool = True, use_timestamps: bool = True,
                 reasoner_layers: int = 2) -> tuple[TFormerConfig, ReasonerConfig]:
    """Model configs sized for a synthetic task: small dims, enough reasoner
    length for the concat baseline's uncompressed token block."""
    if k is None:
        k = max(1, spec.n // 4)
    d_out = spec.d if d_out is None else d_out
    text_len = (2 if spec.kind == "planted_event" else 3) + 1
    tf_cfg = TFormerConfig(
        d=spec.d, t_f=spec.t_f, k=k, n_max=spec.n, d_out=d_out, layers=layers,
        heads=heads, ffn_dim=ffn_dim, use_question_guidance=use_question_guidance,
        use_timestamps=use_timestamps)
    rs_cfg = ReasonerConfig(
        d=d_out, heads=heads, max_len=spec.n * spec.t_f + text_len,
        layers=reasoner_layers, ffn_dim=2 * d_out)
    return tf_cfg, rs_cfg


class QAModel(Module):
    def __init__(self, kind: str, tf_cfg: TFormerConfig, rs_cfg: ReasonerConfig,
                 vocab_size: int, rng: SeededRng, strategy="kmedoids"):
        super().__init__()
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {kind!r}; options: {MODEL_KINDS}")
        if tf_cfg.d_out != rs_cfg.d:
            raise ConfigError(
                f"visual output dim {tf_cfg.d_out} != reasoner dim {rs_cfg.d}")
        self.kind = kind
        self.tf_cfg = tf_cfg
        self.rs_cfg = rs_cfg
        self.reasoner = Reasoner(rs_cfg, vocab_size, rng.child("reasoner"))
        vis_rng = rng.child("visual")
        if kind == "tformer":
            self.visual = TFormer(tf_cfg, vis_rng, strategy)
        elif kind == "spatiotemporal":
            self.visual = spatio_temporal(tf_cfg, vis_rng)
        elif kind == "single":
            self.visual = SingleFrame(tf_cfg.d, tf_cfg.d_out, vis_rng)
        elif kind == "concat":
            self.visual = ConcatFrames(tf_cfg.d, tf_cfg.d_out, rs_cfg.max_len, vis_rng)
        elif kind == "meanpool":
            self.visual = MeanPool(tf_cfg.d, tf_cfg.d_out, vis_rng)
        else:
            self.visual = ZeroSummary(tf_cfg.k * tf_cfg.t_f, tf_cfg.d_out)

    def summarize(self, frames_batch: np.ndarray, question_ids: np.ndarray,
                  rng: SeededRng | None) -> VisualSummary:
        if self.kind in ("tformer", "spatiotemporal"):
            question = QuestionTokens(
                question_ids, embed_tokens(question_ids, self.reasoner.vocab))
            return self.visual.forward_batch(frames_batch, question, rng)
        return self.visual.forward_batch(frames_batch, rng=rng)

    def forward(self, frames_batch: np.ndarray, question_ids: np.ndarray,
                option_ids: np.ndarray, rng: SeededRng | None = None):
        """Returns (logits Tensor [B, |A|], VisualSummary)."""
        summary = self.summarize(frames_batch, question_ids, rng)
        logits = self.reasoner.score_batch(summary.tokens, question_ids, option_ids)
        return logits, summary
