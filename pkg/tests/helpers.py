"""Shared test oracles: independent reference implementations kept deliberately
dumb (loops, enumeration) so they cannot share a bug with the library code."""

import itertools

import numpy as np

from tformer_lab import autodiff as ad


def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product for 2-D inputs."""
    m, kk = a.shape
    k2, n = b.shape
    assert kk == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(kk):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc
    return out


def attention_loops(q, k, v, heads):
    """Per-head attention with explicit loops; inputs already projected.

    q: [Lq, d], k/v: [Lk, d]. Returns ([Lq, d], weights [heads, Lq, Lk]).
    """
    lq, d = q.shape
    lk = k.shape[0]
    dh = d // heads
    out = np.zeros((lq, d))
    weights = np.zeros((heads, lq, lk))
    for h in range(heads):
        qs = q[:, h * dh:(h + 1) * dh]
        ks = k[:, h * dh:(h + 1) * dh]
        vs = v[:, h * dh:(h + 1) * dh]
        for i in range(lq):
            logits = np.array([qs[i] @ ks[j] for j in range(lk)]) / np.sqrt(dh)
            e = np.exp(logits - logits.max())
            w = e / e.sum()
            weights[h, i] = w
            for j in range(lk):
                out[i, h * dh:(h + 1) * dh] += w[j] * vs[j]
    return out, weights


def best_medoids_bruteforce(dist: np.ndarray, k: int):
    """Exhaustive k-medoid search. Returns (best cost, lexicographically first
    optimal index set)."""
    n = dist.shape[0]
    best_cost = np.inf
    best = None
    for combo in itertools.combinations(range(n), k):
        cost = dist[:, combo].min(axis=1).sum()
        if cost < best_cost - 1e-15:
            best_cost = cost
            best = combo
    return best_cost, best


def fd_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar-valued f at x, full enumeration."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * step)
    return g


def fd_gradient_at(f, x: np.ndarray, flat_indices, step: float = 1e-5) -> np.ndarray:
    """Central finite differences at selected flat indices only; returns one
    derivative per index. Used where full enumeration would not fit a time
    budget — every tensor still gets probed."""
    flat = x.reshape(-1)
    out = np.zeros(len(flat_indices))
    for j, i in enumerate(flat_indices):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        out[j] = (hi - lo) / (2 * step)
    return out


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_grad(build_loss, params, step=1e-5, tol=1e-4):
    """build_loss() -> scalar Tensor; params: list of Parameters to check.

    Runs a fresh forward for the analytic gradient, then finite differences
    against re-evaluated losses. Returns the worst relative error seen.
    """
    loss = build_loss()
    for p in params:
        p.zero_grad()
    ad.backward(loss)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        def value():
            with ad.no_grad():
                return float(build_loss().data)
        numeric = fd_gradient(value, p.data, step)
        worst = max(worst, rel_err(g, numeric))
    assert worst <= tol, f"gradient mismatch: rel err {worst:.3e} > {tol}"
    return worst
