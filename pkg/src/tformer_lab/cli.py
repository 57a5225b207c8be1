"""Experiment driver.

Subcommands: gen | train | eval | ablate | attnmap. Every command takes a flat
YAML config (--config), an output directory (--out), and an optional --seed
override; the fully resolved configuration is echoed into the output directory.
Unknown config keys are rejected. Exit codes: 0 ok, 2 configuration error,
3 runtime abort. TFORMER_LAB_THREADS caps ablation sweep parallelism.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import autodiff as ad
from .checkpoint import CheckpointError, load_checkpoint
from .container import ContainerError
from .layers import ConfigError
from .model import MODEL_KINDS, QAModel, desk_configs
from .optim import AdamW
from .reasoner import ReasonerConfig
from .rng import SeededRng
from .sampler import STRATEGY_NAMES, SamplingStrategy
from .synthgen import (TASK_KINDS, TaskSpec, file_checksum, generate,
                       load_dataset, save_dataset)
from .tformer import TFormerConfig, export_attention_maps
from .trainer import TrainConfig, evaluate, train

# ---------------------------------------------------------------------------
# configuration schema
# ---------------------------------------------------------------------------

_SCHEMA: dict[str, tuple] = {
    # task / dataset
    "task": (str, "planted_event"),
    "n": (int, 16),
    "t_f": (int, 2),
    "d": (int, 32),
    "num_event_types": (int, 8),
    "num_options": (int, 4),
    "noise_sigma": (float, 0.1),
    "train_size": (int, 4000),
    "val_size": (int, 500),
    "test_size": (int, 1000),
    "data_seed": (int, 0),
    "dataset_path": (str, ""),
    # model
    "model": (str, "tformer"),
    "strategy": (str, "kmedoids"),
    "kmeans_iters": (int, 20),
    "k": (int, 0),  # 0 means n // 4
    "layers": (int, 2),
    "heads": (int, 4),
    "ffn_dim": (int, 64),
    "d_out": (int, 0),  # 0 means same as d
    "use_question_guidance": (bool, True),
    "use_timestamps": (bool, True),
    "reasoner_layers": (int, 2),
    # training
    "batch_size": (int, 16),
    "epochs": (int, 5),
    "iters_per_epoch": (int, 200),
    "warmup_epochs": (int, 1),
    "cooldown_epochs": (int, 0),
    "init_lr": (float, 1e-3),
    "warmup_lr": (float, 1e-4),
    "min_lr": (float, 1e-5),
    "weight_decay": (float, 0.01),
    "seed": (int, 0),
    "keep_epoch_checkpoints": (bool, False),
    # eval / attention export
    "checkpoint_path": (str, ""),
    "run_dir": (str, ""),
    "attn_samples": (str, "0"),
    "attn_epochs": (str, "0"),
}

_VALID_STRATEGIES = STRATEGY_NAMES + ("learnable",)


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text())
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config must be a flat key-value mapping, got {type(raw).__name__}")
    unknown = sorted(set(raw) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = {}
    for key, (typ, default) in _SCHEMA.items():
        if key not in raw:
            cfg[key] = default
            continue
        value = raw[key]
        if typ is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"config key {key!r} must be a boolean, got {value!r}")
        elif typ is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        elif typ is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
            value = float(value)
        elif typ is str and not isinstance(value, str):
            raise ConfigError(f"config key {key!r} must be a string, got {value!r}")
        cfg[key] = value
    if cfg["model"] not in MODEL_KINDS:
        raise ConfigError(f"model must be one of {MODEL_KINDS}, got {cfg['model']!r}")
    if cfg["strategy"] not in _VALID_STRATEGIES:
        raise ConfigError(
            f"strategy must be one of {_VALID_STRATEGIES}, got {cfg['strategy']!r}")
    if cfg["task"] not in TASK_KINDS:
        raise ConfigError(f"task must be one of {TASK_KINDS}, got {cfg['task']!r}")
    return cfg


def echo_config(cfg: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_resolved.yaml").write_text(
        yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False))


def _task_spec(cfg: dict) -> TaskSpec:
    return TaskSpec(
        kind=cfg["task"], n=cfg["n"], t_f=cfg["t_f"], d=cfg["d"],
        num_event_types=cfg["num_event_types"],
        num_options=2 if cfg["task"] == "event_order" else cfg["num_options"],
        noise_sigma=cfg["noise_sigma"], train_size=cfg["train_size"],
        val_size=cfg["val_size"], test_size=cfg["test_size"], seed=cfg["data_seed"])


def _model_configs(cfg: dict, spec: TaskSpec) -> tuple[TFormerConfig, ReasonerConfig]:
    return desk_configs(
        spec, k=cfg["k"] or None, layers=cfg["layers"], heads=cfg["heads"],
        ffn_dim=cfg["ffn_dim"], d_out=cfg["d_out"] or None,
        use_question_guidance=cfg["use_question_guidance"],
        use_timestamps=cfg["use_timestamps"], reasoner_layers=cfg["reasoner_layers"])


def _strategy(cfg: dict):
    if cfg["strategy"] == "learnable":
        return "learnable"
    return SamplingStrategy(cfg["strategy"], kmeans_iters=cfg["kmeans_iters"])


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg["batch_size"], epochs=cfg["epochs"],
        iters_per_epoch=cfg["iters_per_epoch"], warmup_epochs=cfg["warmup_epochs"],
        cooldown_epochs=cfg["cooldown_epochs"], init_lr=cfg["init_lr"],
        warmup_lr=cfg["warmup_lr"], min_lr=cfg["min_lr"],
        weight_decay=cfg["weight_decay"], seed=cfg["seed"])


def _load_dataset(cfg: dict):
    if not cfg["dataset_path"]:
        raise ConfigError("config key 'dataset_path' is required for this command")
    try:
        return load_dataset(cfg["dataset_path"])
    except ContainerError as exc:
        raise ConfigError(str(exc)) from None


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        return [int(part) for part in str(text).replace(" ", "").split(",") if part != ""]
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated integer list, got {text!r}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(cfg: dict, out_dir: Path) -> int:
    spec = _task_spec(cfg)
    dataset = generate(spec)
    echo_config(cfg, out_dir)
    path = out_dir / "dataset.tflb"
    save_dataset(dataset, path)
    print(f"dataset {path} sha256={file_checksum(path)}")
    return 0


def cmd_train(cfg: dict, out_dir: Path) -> int:
    dataset = _load_dataset(cfg)
    echo_config(cfg, out_dir)
    tf_cfg, rs_cfg = _model_configs(cfg, dataset.spec)
    result = train(cfg["model"], dataset, _train_config(cfg), tf_cfg, rs_cfg,
                   strategy=_strategy(cfg), out_dir=out_dir,
                   keep_epoch_checkpoints=cfg["keep_epoch_checkpoints"])
    print(f"trained {cfg['model']} best_val={result.best_val:.4f} "
          f"(epoch {result.best_epoch})")
    return 0


def cmd_eval(cfg: dict, out_dir: Path | None) -> int:
    dataset = _load_dataset(cfg)
    if not cfg["checkpoint_path"]:
        raise ConfigError("config key 'checkpoint_path' is required for eval")
    tf_cfg, rs_cfg = _model_configs(cfg, dataset.spec)
    model = QAModel(cfg["model"], tf_cfg, rs_cfg, dataset.vocab_size,
                    SeededRng(cfg["seed"]).child("init"), _strategy(cfg))
    load_checkpoint(cfg["checkpoint_path"], model)
    accs = evaluate(model, dataset, "test", SeededRng(cfg["seed"]).child("eval"))
    line = json.dumps(accs, sort_keys=True)
    print(line)
    if out_dir is not None:
        echo_config(cfg, out_dir)
        (out_dir / "eval.json").write_text(line + "\n")
    return 0


# Ablation axes: each entry maps a setting label to config overrides.
def _axis_cells(axis: str, cfg: dict) -> list[tuple[str, dict]]:
    if axis == "strategy":
        return [(name, {"model": "tformer", "strategy": name})
                for name in STRATEGY_NAMES]
    if axis == "init":
        return [("learnable", {"model": "tformer", "strategy": "learnable"}),
                ("sampled_kmedoids", {"model": "tformer", "strategy": "kmedoids"})]
    if axis == "layers":
        return [(f"layers{v}", {"layers": v}) for v in (1, 2, 3)]
    if axis == "heads":
        return [(f"heads{v}", {"heads": v}) for v in (1, 2, 4, 8)]
    if axis == "ffn":
        return [(f"ffn{v:03d}", {"ffn_dim": v}) for v in (16, 32, 64, 128)]
    if axis == "ratio":
        cells = []
        for n in (8, 16, 32):
            for k in (1, 4, 8):
                cells.append((f"n{n:02d}_k{k}", {"n": n, "k": k}))
        return cells
    if axis == "module":
        return [
            ("full", {"model": "tformer"}),
            ("no_guidance", {"model": "tformer", "use_question_guidance": False}),
            ("no_tformer", {"model": "concat"}),
            ("no_timestamps", {"model": "tformer", "use_timestamps": False}),
        ]
    raise ConfigError(
        f"unknown ablation axis {axis!r}; options: strategy, init, layers, heads, "
        f"ratio, module, ffn")


def _run_ablate_cell(payload: tuple[str, dict]) -> dict:
    label, cfg = payload
    started = time.monotonic()
    spec = _task_spec(cfg)
    dataset = generate(spec)
    tf_cfg, rs_cfg = _model_configs(cfg, spec)
    result = train(cfg["model"], dataset, _train_config(cfg), tf_cfg, rs_cfg,
                   strategy=_strategy(cfg))
    result.model.load_state_dict(result.best_state)
    accs = evaluate(result.model, dataset, "test",
                    SeededRng(cfg["seed"]).child("eval-test"))
    return {
        "setting": label,
        "acc_overall": accs["overall"],
        f"acc_{spec.kind}": accs[spec.kind],
        "params_trained": result.model.param_count(),
        "seconds": time.monotonic() - started,
    }


def cmd_ablate(cfg: dict, axis: str, out_dir: Path) -> int:
    cells = _axis_cells(axis, cfg)
    echo_config(cfg, out_dir)
    payloads = [(label, {**cfg, **overrides}) for label, overrides in cells]
    workers = len(payloads)
    cap = os.environ.get("TFORMER_LAB_THREADS", "")
    if cap:
        try:
            workers = max(1, min(workers, int(cap)))
        except ValueError:
            raise ConfigError(f"TFORMER_LAB_THREADS must be an integer, got {cap!r}")
    else:
        workers = max(1, min(workers, os.cpu_count() or 1))

    if workers == 1:
        rows = [_run_ablate_cell(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_ablate_cell, payloads))

    rows.sort(key=lambda r: r["setting"])
    kind = _task_spec(cfg).kind
    columns = ["setting", "acc_overall", f"acc_{kind}", "params_trained"]
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(
            str(row[c]) if isinstance(row[c], int) else
            (row[c] if isinstance(row[c], str) else repr(float(row[c])))
            for c in columns))
    (out_dir / "results.csv").write_text("\n".join(lines) + "\n")
    # Wall times are the one non-reproducible output; they live in the log only.
    with open(out_dir / "ablate.log", "w") as f:
        for row in rows:
            f.write(f"{row['setting']} seconds={row['seconds']:.2f}\n")
    print((out_dir / "results.csv").read_text(), end="")
    return 0


def _write_pgm(path, matrix: np.ndarray, lo: float, hi: float):
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pixels = np.clip(np.rint((matrix - lo) * scale), 0, 255).astype(np.uint8)
    rows, cols = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def cmd_attnmap(cfg: dict, out_dir: Path) -> int:
    dataset = _load_dataset(cfg)
    if not cfg["run_dir"]:
        raise ConfigError("config key 'run_dir' is required for attnmap")
    run_dir = Path(cfg["run_dir"])
    sample_ids = _parse_int_list(cfg["attn_samples"], "attn_samples")
    epoch_list = _parse_int_list(cfg["attn_epochs"], "attn_epochs")
    test = dataset.splits["test"]
    for sid in sample_ids:
        if not 0 <= sid < test.size:
            raise ConfigError(f"attn sample id {sid} outside test split of {test.size}")
    if cfg["model"] not in ("tformer", "spatiotemporal"):
        raise ConfigError(f"attention maps need a querying model, not {cfg['model']!r}")
    echo_config(cfg, out_dir)

    tf_cfg, rs_cfg = _model_configs(cfg, dataset.spec)
    for epoch in epoch_list:
        ckpt = run_dir / f"checkpoint_epoch_{epoch}.tflb"
        if not ckpt.exists():
            raise ConfigError(
                f"no checkpoint for epoch {epoch}: {ckpt} (train with "
                f"keep_epoch_checkpoints: true)")
        model = QAModel(cfg["model"], tf_cfg, rs_cfg, dataset.vocab_size,
                        SeededRng(cfg["seed"]).child("init"), _strategy(cfg))
        load_checkpoint(ckpt, model)
        rng = SeededRng(cfg["seed"]).child(f"attn{epoch}")
        for sid in sample_ids:
            with ad.no_grad():
                _, summary = model.forward(test.frames[sid:sid + 1],
                                           test.question_ids[sid:sid + 1],
                                           test.options[sid:sid + 1], rng)
            matrix = export_attention_maps(summary, frame_granularity=True)[0]
            base = out_dir / f"attn_sample{sid}_epoch{epoch}"
            lo, hi = float(matrix.min()), float(matrix.max())
            _write_pgm(base.with_suffix(".pgm"), matrix, lo, hi)
            with open(base.with_suffix(".csv"), "w") as f:
                for row in matrix:
                    f.write(",".join(repr(float(v)) for v in row) + "\n")
            base.with_suffix(".json").write_text(json.dumps(
                {"sample": sid, "epoch": epoch, "min": lo, "max": hi,
                 "rows": int(matrix.shape[0]), "cols": int(matrix.shape[1])},
                sort_keys=True) + "\n")
            print(f"wrote {base}.pgm ({matrix.shape[0]}x{matrix.shape[1]})")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tformer-lab",
        description="Synthetic video-QA lab for temporal query compression.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_out in (("gen", True), ("train", True), ("eval", False),
                            ("ablate", True), ("attnmap", True)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat YAML config file")
        p.add_argument("--out", required=needs_out, default=None,
                       help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        if name == "ablate":
            p.add_argument("--axis", required=True,
                           help="strategy|init|layers|heads|ratio|module|ffn")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        out_dir = Path(args.out) if args.out else None
        if args.command == "gen":
            return cmd_gen(cfg, out_dir)
        if args.command == "train":
            return cmd_train(cfg, out_dir)
        if args.command == "eval":
            return cmd_eval(cfg, out_dir)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.axis, out_dir)
        return cmd_attnmap(cfg, out_dir)
    except (ConfigError, ContainerError, CheckpointError, ValueError, KeyError,
            FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, FloatingPointError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
