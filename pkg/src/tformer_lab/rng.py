"""Reproducible random streams.

Every random draw in the package flows through :class:`SeededRng`, a thin
wrapper over numpy's PCG64 bit generator.  PCG64 is a named, versioned
algorithm with a platform-independent stream, so a seed pins every dataset,
initialization, and training trajectory bit-for-bit.

Derived streams (``child``) mix the parent's entropy with a SHA-256 hash of a
string tag, so independent components (init vs. batch sampling vs. eval) get
decorrelated streams that are still fully determined by the root seed.
"""

from __future__ import annotations

import hashlib

import numpy as np

ALGORITHM = "PCG64"


def _tag_entropy(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little")


class SeededRng:
    """PCG64 stream determined by a root seed and a chain of string tags."""

    def __init__(self, seed: int, _entropy: tuple[int, ...] | None = None):
        self.seed = int(seed)
        self._entropy = _entropy if _entropy is not None else (self.seed,)
        self.gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(list(self._entropy)))
        )

    def child(self, tag: str) -> "SeededRng":
        """Independent stream derived from this one by a string tag."""
        rng = SeededRng.__new__(SeededRng)
        rng.seed = self.seed
        rng._entropy = self._entropy + (_tag_entropy(tag),)
        rng.gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(list(rng._entropy)))
        )
        return rng

    # -- draws ---------------------------------------------------------------

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self.gen.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int | None = None) -> int:
        return int(self.gen.integers(low, high))

    def index_batch(self, n: int, size: int) -> np.ndarray:
        """`size` uniform draws from range(n), with replacement."""
        return self.gen.integers(0, n, size=size)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        return self.gen.choice(n, size=k, replace=False)

    def uniform(self, shape=None) -> np.ndarray:
        return self.gen.random(size=shape)

    def shuffled(self, items):
        out = list(items)
        self.gen.shuffle(out)
        return out

    # -- state capture (for checkpointing) -----------------------------------

    def get_state(self) -> dict:
        state = self.gen.bit_generator.state
        return {
            "algorithm": state["bit_generator"],
            "entropy": [str(e) for e in self._entropy],
            "state": str(state["state"]["state"]),
            "inc": str(state["state"]["inc"]),
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }

    def set_state(self, snapshot: dict) -> None:
        if snapshot["algorithm"] != ALGORITHM:
            raise ValueError(f"unknown rng algorithm {snapshot['algorithm']!r}")
        self._entropy = tuple(int(e) for e in snapshot["entropy"])
        self.gen.bit_generator.state = {
            "bit_generator": ALGORITHM,
            "state": {"state": int(snapshot["state"]), "inc": int(snapshot["inc"])},
            "has_uint32": snapshot["has_uint32"],
            "uinteger": snapshot["uinteger"],
        }
