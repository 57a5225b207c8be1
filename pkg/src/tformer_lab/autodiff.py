"""Reverse-mode autodiff over dense float64 numpy arrays.

A :class:`Tensor` wraps an ndarray and records the op that produced it; calling
:func:`backward` on a scalar tensor walks the recorded graph in reverse
topological order and accumulates gradients into every tensor that requires
them.  The graph is rebuilt on every forward pass, so shapes may vary freely
between steps (query counts depend on the input video).

Everything is float64: the scale is small and the finite-difference gradient
checks need the headroom.
"""

from __future__ import annotations

import math

import numpy as np


class ShapeError(ValueError):
    pass


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (cheap eval forwards)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Node in the computation graph: a float64 array plus backward plumbing."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; every op routes through the module-level functions.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("tensor division is only defined for scalars")
        return mul(self, 1.0 / float(other))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def item(self) -> float:
        return float(self.data)


class Parameter(Tensor):
    """Trainable leaf tensor. ``grad`` is allocated eagerly and zeroed on demand."""

    __slots__ = ("trainable", "name")

    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(data, requires_grad=True)
        self.trainable = trainable
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad.fill(0.0)


# ---------------------------------------------------------------------------
# graph construction helpers
# ---------------------------------------------------------------------------


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray, fresh: bool = True):
    """Add ``g`` into ``t.grad``. ``fresh=False`` marks ``g`` as a view that
    must be copied before ownership."""
    if t.grad is None:
        t.grad = g if fresh else g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data + b.data, (a, b), None)
    if out.requires_grad:
        def backward():
            g = out.grad
            if a.requires_grad:
                _accum(a, _unbroadcast(g, a.data.shape), fresh=False)
            if b.requires_grad:
                _accum(b, _unbroadcast(g, b.data.shape), fresh=False)
        out._backward = backward
    return out


def mul(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        scalar = float(b)
        out = _node(a.data * scalar, (a,), None)
        if out.requires_grad:
            def backward():
                _accum(a, out.grad * scalar)
            out._backward = backward
        return out
    b = as_tensor(b)
    out = _node(a.data * b.data, (a, b), None)
    if out.requires_grad:
        def backward():
            g = out.grad
            if a.requires_grad:
                _accum(a, _unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(g * a.data, b.data.shape))
        out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Supports ``[..., m, k] @ [k, n]`` (shared rhs, e.g. a
    weight matrix) and ``[..., m, k] @ [..., k, n]`` with identical leading
    dims."""
    a, b = as_tensor(a), as_tensor(b)
    ash, bsh = a.data.shape, b.data.shape
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {ash} @ {bsh}")
    if ash[-1] != bsh[-2]:
        raise ShapeError(f"matmul inner extents differ: {ash} @ {bsh}")
    if b.data.ndim != 2 and ash[:-2] != bsh[:-2]:
        raise ShapeError(f"matmul leading dims differ: {ash} @ {bsh}")
    out = _node(a.data @ b.data, (a, b), None)
    if out.requires_grad:
        def backward():
            g = out.grad
            if a.requires_grad:
                _accum(a, g @ np.swapaxes(b.data, -1, -2))
            if b.requires_grad:
                if b.data.ndim == 2 and a.data.ndim > 2:
                    k, n = b.data.shape
                    _accum(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))
                else:
                    _accum(b, np.swapaxes(a.data, -1, -2) @ g)
        out._backward = backward
    return out


def reshape(t: Tensor, shape) -> Tensor:
    out = _node(t.data.reshape(shape), (t,), None)
    if out.requires_grad:
        orig = t.data.shape

        def backward():
            _accum(t, out.grad.reshape(orig), fresh=False)
        out._backward = backward
    return out


def swapaxes(t: Tensor, a: int, b: int) -> Tensor:
    out = _node(np.swapaxes(t.data, a, b), (t,), None)
    if out.requires_grad:
        def backward():
            _accum(t, np.swapaxes(out.grad, a, b), fresh=False)
        out._backward = backward
    return out


def take(t: Tensor, idx) -> Tensor:
    """Basic slicing/indexing; backward scatters into a zero array."""
    out = _node(t.data[idx], (t,), None)
    if out.requires_grad:
        def backward():
            g = np.zeros_like(t.data)
            np.add.at(g, idx, out.grad)
            _accum(t, g)
        out._backward = backward
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), None)
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]

        def backward():
            offsets = np.cumsum([0] + sizes)
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(lo, hi)
                    _accum(t, out.grad[tuple(sl)], fresh=False)
        out._backward = backward
    return out


def repeat_axis(t: Tensor, axis: int, reps: int) -> Tensor:
    """Insert a broadcast axis of size ``reps`` at position ``axis`` (e.g. share
    one parameter block across a batch); backward sums over that axis."""
    data = np.expand_dims(t.data, axis)
    shape = list(data.shape)
    shape[axis] = reps
    out = _node(np.broadcast_to(data, tuple(shape)), (t,), None)
    if out.requires_grad:
        def backward():
            _accum(t, out.grad.sum(axis=axis))
        out._backward = backward
    return out


def order_free_mean(t: Tensor, axis: int) -> Tensor:
    """Mean along ``axis``, computed by sorting the addends first.

    Sorting canonicalizes the summation order, so any permutation of the input
    along ``axis`` produces a bitwise-identical result (plain summation is not
    associative in floating point). The gradient of a sum is 1 per element
    regardless of order, so backward is the usual broadcast of grad/n.
    """
    n = t.data.shape[axis]
    out = _node(np.sort(t.data, axis=axis).sum(axis=axis) / n, (t,), None)
    if out.requires_grad:
        def backward():
            g = np.expand_dims(out.grad, axis) / n
            _accum(t, np.broadcast_to(g, t.data.shape), fresh=False)
        out._backward = backward
    return out


def tensor_sum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _node(t.data.sum(axis=axis, keepdims=keepdims), (t,), None)
    if out.requires_grad:
        def backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(t, np.broadcast_to(g, t.data.shape), fresh=False)
        out._backward = backward
    return out


def tensor_mean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = t.data.size if axis is None else (
        np.prod([t.data.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tensor_sum(t, axis=axis, keepdims=keepdims), 1.0 / float(n))


def gelu(t: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh form). Smooth everywhere, which keeps
    finite-difference checks clean."""
    c = math.sqrt(2.0 / math.pi)
    x = t.data
    x2 = x * x
    # x*x*x, not x**3: integer powers go through libm pow per element.
    u = c * (x + 0.044715 * (x2 * x))
    th = np.tanh(u)
    out = _node(0.5 * x * (1.0 + th), (t,), None)
    if out.requires_grad:
        def backward():
            du = c * (1.0 + 0.134145 * x2)
            local = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
            _accum(t, out.grad * local)
        out._backward = backward
    return out


def softmax_rows(t: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    x = t.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = _node(s, (t,), None)
    if out.requires_grad:
        def backward():
            g = out.grad
            _accum(t, s * (g - (g * s).sum(axis=-1, keepdims=True)))
        out._backward = backward
    return out


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    x = t.data
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm needs feature dim >= 2, got {x.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = _node(xhat * gain.data + bias.data, (t, gain, bias), None)
    if out.requires_grad:
        def backward():
            g = out.grad
            if gain.requires_grad:
                _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
            if bias.requires_grad:
                _accum(bias, g.reshape(-1, d).sum(axis=0))
            if t.requires_grad:
                gx = g * gain.data
                m1 = gx.mean(axis=-1, keepdims=True)
                m2 = (gx * xhat).mean(axis=-1, keepdims=True)
                _accum(t, (gx - m1 - xhat * m2) * inv)
        out._backward = backward
    return out


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: ``table[ids]``. Gradient flows only to looked-up rows."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(
            f"token id out of range: ids span [{ids.min()}, {ids.max()}], "
            f"table has {table.data.shape[0]} rows")
    out = _node(table.data[ids], (table,), None)
    if out.requires_grad:
        def backward():
            g = np.zeros_like(table.data)
            np.add.at(g, ids, out.grad)
            _accum(table, g)
        out._backward = backward
    return out


def cross_entropy(logits: Tensor, gold) -> Tensor:
    """Mean softmax cross-entropy. ``logits`` is ``[C]`` with int gold or
    ``[B, C]`` with a ``[B]`` gold vector."""
    x = logits.data
    gold = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    x2 = x.reshape(-1, x.shape[-1])
    if gold.shape[0] != x2.shape[0]:
        raise ShapeError(f"cross_entropy: {x2.shape[0]} rows vs {gold.shape[0]} labels")
    shifted = x2 - x2.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1)) + x2.max(axis=-1)
    losses = lse - x2[np.arange(x2.shape[0]), gold]
    out = _node(losses.mean(), (logits,), None)
    if out.requires_grad:
        def backward():
            probs = np.exp(shifted)
            probs /= probs.sum(axis=-1, keepdims=True)
            probs[np.arange(x2.shape[0]), gold] -= 1.0
            probs *= float(out.grad) / x2.shape[0]
            _accum(logits, probs.reshape(x.shape))
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(x) into every reachable tensor requiring grad.

    Repeated calls without zeroing accumulate, matching the usual
    gradient-accumulation contract.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward expects a scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    _accum(loss, np.ones((), dtype=np.float64))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()
            # Interior grads are one-shot; freeing them caps peak memory.
            if not isinstance(node, Parameter):
                node.grad = None
