"""Training and evaluation loop.

Determinism contract: one root seed spawns three independent streams — "init"
(parameter init), "train" (batch sampling plus all forward-pass draws, saved in
checkpoints), and per-epoch "eval" children derived from the root — so resuming
from an epoch checkpoint reproduces the uninterrupted run bit for bit.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import config_fingerprint, load_checkpoint, save_checkpoint
from .model import MODEL_KINDS, QAModel, desk_configs
from .optim import AdamW, LrSchedule, lr_at
from .reasoner import ReasonerConfig, qa_loss
from .rng import SeededRng
from .synthgen import Dataset, Split
from .tformer import TFormerConfig


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 5
    iters_per_epoch: int = 200
    warmup_epochs: int = 1
    cooldown_epochs: int = 0
    init_lr: float = 1e-3
    warmup_lr: float = 1e-4
    min_lr: float = 1e-5
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.epochs, self.iters_per_epoch) < 1:
            raise ValueError("batch_size, epochs, iters_per_epoch must be positive")
        if self.warmup_epochs < 0 or self.cooldown_epochs < 0:
            raise ValueError("warmup/cooldown epochs cannot be negative")
        if self.warmup_epochs + self.cooldown_epochs >= self.epochs:
            raise ValueError(
                f"warmup ({self.warmup_epochs}) + cooldown ({self.cooldown_epochs}) "
                f"epochs must leave room inside {self.epochs} total epochs")

    def schedule(self) -> LrSchedule:
        """Cooldown is realized by holding min_lr: the cosine span ends at
        (epochs - cooldown_epochs) and later steps clamp to its endpoint."""
        return LrSchedule(
            init_lr=self.init_lr, warmup_lr=self.warmup_lr, min_lr=self.min_lr,
            warmup_steps=self.warmup_epochs * self.iters_per_epoch,
            total_steps=(self.epochs - self.cooldown_epochs) * self.iters_per_epoch)

    @classmethod
    def nextqa_recipe(cls, seed: int = 0) -> "TrainConfig":
        """The published NExT-QA recipe. Its learning rates target fine-tuning
        of adapters on a frozen giant stack; from-scratch desk training uses
        the class defaults instead."""
        return cls(batch_size=2, epochs=10, iters_per_epoch=2500, warmup_epochs=1,
                   cooldown_epochs=2, init_lr=3e-5, warmup_lr=8e-6, min_lr=1e-6,
                   weight_decay=0.01, seed=seed)


@dataclass
class MetricLog:
    kind: str
    rows: list[dict] = field(default_factory=list)

    def columns(self) -> list[str]:
        return ["epoch", "step", "lr", "train_loss", "val_acc_overall",
                f"val_acc_{self.kind}"]

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(self.columns()) + "\n")
        for row in self.rows:
            cells = []
            for col in self.columns():
                value = row[col]
                cells.append(str(value) if isinstance(value, int) else repr(float(value)))
            out.write(",".join(cells) + "\n")
        return out.getvalue()

    def write(self, path):
        Path(path).write_text(self.to_csv())


@dataclass
class TrainResult:
    log: MetricLog
    model: QAModel
    best_val: float
    best_epoch: int
    best_state: dict
    fingerprint: str


def _split(dataset: Dataset, which) -> Split:
    return dataset.splits[which] if isinstance(which, str) else which


def evaluate(model: QAModel, dataset: Dataset, split="val",
             rng: SeededRng | None = None, batch_size: int = 128) -> dict:
    """Micro accuracy, overall and per question kind. Never mutates the model."""
    data = _split(dataset, split)
    if rng is None:
        rng = SeededRng(0).child("eval")
    correct = 0
    with ad.no_grad():
        for lo in range(0, data.size, batch_size):
            hi = min(lo + batch_size, data.size)
            logits, _ = model.forward(data.frames[lo:hi], data.question_ids[lo:hi],
                                      data.options[lo:hi], rng)
            correct += int((np.argmax(logits.data, axis=1) == data.gold[lo:hi]).sum())
    acc = correct / data.size
    return {"overall": acc, dataset.spec.kind: acc}


def train(kind: str, dataset: Dataset, cfg: TrainConfig,
          tf_cfg: TFormerConfig | None = None, rs_cfg: ReasonerConfig | None = None,
          strategy="kmedoids", out_dir=None, resume_from=None,
          keep_epoch_checkpoints: bool = False, stop_after_epoch=None) -> TrainResult:
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; options: {MODEL_KINDS}")
    if tf_cfg is None or rs_cfg is None:
        default_tf, default_rs = desk_configs(dataset.spec)
        tf_cfg = tf_cfg or default_tf
        rs_cfg = rs_cfg or default_rs

    strategy_label = strategy if isinstance(strategy, str) else strategy.name
    fingerprint = config_fingerprint(kind, strategy_label, cfg, tf_cfg, rs_cfg,
                                     dataset.spec, dataset.vocab_size)
    root = SeededRng(cfg.seed)
    model = QAModel(kind, tf_cfg, rs_cfg, dataset.vocab_size, root.child("init"),
                    strategy)
    optimizer = AdamW(model.named_parameters(), weight_decay=cfg.weight_decay)
    train_rng = root.child("train")
    sched = cfg.schedule()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    step = 0
    start_epoch = 0
    best_val = -1.0
    best_epoch = -1
    best_state: dict = {}
    if resume_from is not None:
        counters = load_checkpoint(resume_from, model, optimizer, train_rng,
                                   fingerprint)
        step = counters["step"]
        start_epoch = counters["epoch"]
        best_val = counters["best_val"]

    train_data = dataset.splits["train"]
    log = MetricLog(dataset.spec.kind)
    for epoch in range(start_epoch, cfg.epochs):
        loss_sum = 0.0
        for _ in range(cfg.iters_per_epoch):
            idx = train_rng.index_batch(train_data.size, cfg.batch_size)
            logits, _ = model.forward(train_data.frames[idx],
                                      train_data.question_ids[idx],
                                      train_data.options[idx], train_rng)
            loss = qa_loss(logits, train_data.gold[idx])
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise RuntimeError(f"training loss became non-finite at step {step}")
            optimizer.zero_grad()
            ad.backward(loss)
            optimizer.step(lr_at(sched, min(step, sched.total_steps)))
            loss_sum += loss_value
            step += 1

        val = evaluate(model, dataset, "val", root.child(f"eval{epoch}"))
        row = {
            "epoch": epoch,
            "step": step,
            "lr": lr_at(sched, min(step, sched.total_steps)),
            "train_loss": loss_sum / cfg.iters_per_epoch,
            "val_acc_overall": val["overall"],
            f"val_acc_{dataset.spec.kind}": val[dataset.spec.kind],
        }
        log.rows.append(row)
        if val["overall"] > best_val:
            best_val = val["overall"]
            best_epoch = epoch
            best_state = model.state_dict()
            if out_dir is not None:
                save_checkpoint(out_dir / "checkpoint_best.tflb", model, optimizer,
                                train_rng, step, epoch + 1, best_val, fingerprint)
        if out_dir is not None:
            save_checkpoint(out_dir / "checkpoint_latest.tflb", model, optimizer,
                            train_rng, step, epoch + 1, best_val, fingerprint)
            if keep_epoch_checkpoints:
                save_checkpoint(out_dir / f"checkpoint_epoch_{epoch}.tflb", model,
                                optimizer, train_rng, step, epoch + 1, best_val,
                                fingerprint)
        # Simulated interruption used by the resume tests: stop mid-schedule
        # while keeping the full-run LR schedule and fingerprint.
        if stop_after_epoch is not None and epoch + 1 >= stop_after_epoch:
            break

    if not best_state:
        # Resumed run that never beat the pre-resume best; the live weights are
        # still the ones to hand back.
        best_state = model.state_dict()
    if out_dir is not None:
        log.write(out_dir / "metrics.csv")
    return TrainResult(log, model, best_val, best_epoch, best_state, fingerprint)
