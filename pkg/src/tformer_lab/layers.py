"""Neural building blocks assembled from the autodiff primitives.

All layers accept inputs with arbitrary leading batch dims: ``[..., L, d]``.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .rng import SeededRng


class ConfigError(ValueError):
    """Raised for invalid layer/model configuration."""


class Module:
    """Base class with automatic parameter and submodule registration.

    Assigning a Parameter, Module, or list of Modules to an attribute registers
    it; ``named_parameters`` walks the tree producing stable dotted paths used
    by the optimizer and checkpoints.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, (list, tuple)) and value and all(
                isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._modules[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        mine = dict(self.named_parameters())
        missing = sorted(set(mine) - set(state))
        extra = sorted(set(state) - set(mine))
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={missing} extra={extra}")
        for name, p in mine.items():
            if p.data.shape != state[name].shape:
                raise ValueError(
                    f"shape mismatch for {name}: have {p.data.shape}, "
                    f"loading {state[name].shape}")
            p.data[...] = state[name]

    def param_count(self, trainable_only: bool = True) -> int:
        return sum(p.data.size for p in self.parameters()
                   if p.trainable or not trainable_only)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: SeededRng, bias: bool = True,
                 init_scale: float | None = None):
        super().__init__()
        # Fan-in scaling keeps activations O(1) at init; with tiny weights the
        # per-option score paths start indistinguishable and training stalls.
        if init_scale is None:
            init_scale = 1.0 / math.sqrt(d_in)
        self.weight = Parameter(rng.normal((d_in, d_out), scale=init_scale))
        if bias:
            self.bias = Parameter(np.zeros(d_out))
        else:
            self.bias = None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight)
        if self.bias is not None:
            y = ad.add(y, self.bias)
        return y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., L, d] -> [..., heads, L, d/heads]"""
    *lead, length, d = x.data.shape
    x = ad.reshape(x, tuple(lead) + (length, heads, d // heads))
    return ad.swapaxes(x, -3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    """[..., heads, L, dh] -> [..., L, heads*dh]"""
    x = ad.swapaxes(x, -3, -2)
    *lead, length, heads, dh = x.data.shape
    return ad.reshape(x, tuple(lead) + (length, heads * dh))


class MultiHeadAttention(Module):
    """Scaled dot-product attention with per-head splitting.

    Default uses four separate projection matrices (query, key, value, output).
    ``tied_qkv=True`` instead shares one projection for query, key, and value,
    the literal single-matrix reading; kept as an option, not the default.
    Returns ``(output, weights)`` with weights shaped ``[..., heads, L_q, L_k]``
    so callers can retain them for inspection.
    """

    def __init__(self, d: int, heads: int, rng: SeededRng, tied_qkv: bool = False):
        super().__init__()
        if d % heads != 0:
            raise ConfigError(f"model dim {d} not divisible by heads {heads}")
        self.d = d
        self.heads = heads
        self.tied_qkv = tied_qkv
        if tied_qkv:
            self.proj_shared = Linear(d, d, rng.child("qkv"))
        else:
            # Query and key start as the same draw (they diverge in training):
            # W_q^T W_k then has identity expectation, so attention begins as
            # content matching instead of near-uniform mixing. Uniform rows at
            # init starve the downstream loss of per-token signal.
            # No key bias: a constant added to every key cancels in softmax,
            # so that direction would carry exactly zero gradient forever.
            self.proj_q = Linear(d, d, rng.child("qk"))
            self.proj_k = Linear(d, d, rng.child("qk"), bias=False)
            self.proj_v = Linear(d, d, rng.child("v"))
        self.proj_out = Linear(d, d, rng.child("out"))

    def __call__(self, q_in: Tensor, k_in: Tensor | None = None,
                 v_in: Tensor | None = None) -> tuple[Tensor, Tensor]:
        if k_in is None:
            k_in = q_in
        if v_in is None:
            v_in = k_in
        if self.tied_qkv:
            q = self.proj_shared(q_in)
            k = self.proj_shared(k_in)
            v = self.proj_shared(v_in)
        else:
            q = self.proj_q(q_in)
            k = self.proj_k(k_in)
            v = self.proj_v(v_in)
        qs = _split_heads(q, self.heads)
        ks = _split_heads(k, self.heads)
        vs = _split_heads(v, self.heads)
        scale = 1.0 / math.sqrt(self.d // self.heads)
        scores = ad.mul(ad.matmul(qs, ad.swapaxes(ks, -1, -2)), scale)
        weights = ad.softmax_rows(scores)
        ctx = ad.matmul(weights, vs)
        return self.proj_out(_merge_heads(ctx)), weights


def multi_head_attention(q_in: Tensor, k_in: Tensor, v_in: Tensor, heads: int,
                         params: MultiHeadAttention) -> tuple[Tensor, Tensor]:
    """Functional entry point; ``params`` carries the projection weights."""
    if heads != params.heads:
        raise ConfigError(f"heads mismatch: asked {heads}, params built for {params.heads}")
    return params(q_in, k_in, v_in)


class FeedForward(Module):
    """Position-wise bottleneck: linear up, GELU, linear down."""

    def __init__(self, d: int, hidden: int, rng: SeededRng):
        super().__init__()
        self.up = Linear(d, hidden, rng.child("up"))
        self.down = Linear(hidden, d, rng.child("down"))

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(ad.gelu(self.up(x)))
