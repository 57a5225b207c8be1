"""Checkpoint persistence: parameters, optimizer moments, RNG state, counters.

Round trips are byte-identical (the container canonicalizes header JSON and
array order), and loading verifies a fingerprint of the run configuration so a
checkpoint cannot silently resume under different settings.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, is_dataclass

from .container import ContainerError, read_container, write_container
from .layers import Module
from .optim import AdamW
from .rng import SeededRng


class CheckpointError(ValueError):
    pass


def config_fingerprint(*parts) -> str:
    """Stable hash over dataclasses / dicts / primitives describing a run."""
    def norm(obj):
        if is_dataclass(obj) and not isinstance(obj, type):
            return {type(obj).__name__: norm(asdict(obj))}
        if isinstance(obj, dict):
            return {str(k): norm(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [norm(v) for v in obj]
        return obj
    blob = json.dumps(norm(parts), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_checkpoint(path, model: Module, optimizer: AdamW, train_rng: SeededRng,
                    step: int, epoch: int, best_val: float, fingerprint: str):
    arrays = {}
    for name, p in model.named_parameters():
        arrays["param." + name] = p.data
    opt_state = optimizer.state_dict()
    for key, value in opt_state.items():
        if key != "step_count":
            arrays["opt." + key] = value
    meta = {
        "step": int(step),
        "epoch": int(epoch),
        "best_val": float(best_val),
        "opt_step_count": int(opt_state["step_count"]),
        "rng": train_rng.get_state(),
        "fingerprint": fingerprint,
    }
    write_container(path, "checkpoint", meta, arrays)


def load_checkpoint(path, model: Module, optimizer: AdamW | None = None,
                    train_rng: SeededRng | None = None,
                    fingerprint: str | None = None) -> dict:
    """Restore state in place; returns the checkpoint counters."""
    try:
        meta, arrays = read_container(path, expect_kind="checkpoint")
    except ContainerError as exc:
        raise CheckpointError(str(exc)) from None
    if fingerprint is not None and meta["fingerprint"] != fingerprint:
        raise CheckpointError(
            f"configuration fingerprint mismatch: checkpoint carries "
            f"{meta['fingerprint'][:12]}.., run resolves to {fingerprint[:12]}..")
    params = {name[len("param."):]: arr for name, arr in arrays.items()
              if name.startswith("param.")}
    model.load_state_dict(params)
    if optimizer is not None:
        state = {key[len("opt."):]: arr for key, arr in arrays.items()
                 if key.startswith("opt.")}
        state["step_count"] = meta["opt_step_count"]
        optimizer.load_state_dict(state)
    if train_rng is not None:
        train_rng.set_state(meta["rng"])
    return {"step": meta["step"], "epoch": meta["epoch"],
            "best_val": meta["best_val"], "fingerprint": meta["fingerprint"]}
