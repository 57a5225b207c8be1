import numpy as np
import pytest

from helpers import attention_loops, check_grad
from tformer_lab import autodiff as ad
from tformer_lab.autodiff import Parameter, Tensor
from tformer_lab.layers import (ConfigError, FeedForward, LayerNorm, Linear,
                                Module, MultiHeadAttention,
                                multi_head_attention)
from tformer_lab.rng import SeededRng


def test_linear_shapes_and_bias():
    rng = SeededRng(0)
    lin = Linear(4, 3, rng)
    x = Tensor(rng.normal((2, 4)))
    y = lin(x)
    assert y.data.shape == (2, 3)
    assert np.array_equal(lin.bias.data, np.zeros(3))
    nb = Linear(4, 3, rng, bias=False)
    assert nb.bias is None


def test_layer_norm_zero_mean_unit_var():
    rng = SeededRng(1)
    ln = LayerNorm(8)
    x = rng.normal((5, 8), scale=3.0) + 7.0
    y = ln(Tensor(x)).data
    assert np.max(np.abs(y.mean(axis=-1))) <= 1e-9
    assert np.max(np.abs(y.var(axis=-1) - 1.0)) <= 1e-4  # eps shifts var slightly


def test_layer_norm_matches_recompute_oracle():
    rng = SeededRng(2)
    ln = LayerNorm(6)
    ln.gain.data[:] = rng.normal((6,)) + 1.0
    ln.bias.data[:] = rng.normal((6,))
    x = rng.normal((3, 6))
    got = ln(Tensor(x)).data
    for i in range(3):
        mu = x[i].mean()
        var = x[i].var()
        want = (x[i] - mu) / np.sqrt(var + 1e-5) * ln.gain.data + ln.bias.data
        assert np.max(np.abs(got[i] - want)) <= 1e-9


def test_attention_matches_per_head_loop_oracle():
    rng = SeededRng(3)
    d, heads, lq, lk = 8, 2, 3, 5
    attn = MultiHeadAttention(d, heads, rng)
    q_in = rng.normal((lq, d))
    k_in = rng.normal((lk, d))
    out, weights = attn(Tensor(q_in), Tensor(k_in), Tensor(k_in))

    q = q_in @ attn.proj_q.weight.data + attn.proj_q.bias.data
    k = k_in @ attn.proj_k.weight.data  # key path carries no bias
    v = k_in @ attn.proj_v.weight.data + attn.proj_v.bias.data
    ctx, wref = attention_loops(q, k, v, heads)
    want = ctx @ attn.proj_out.weight.data + attn.proj_out.bias.data

    assert weights.data.shape == (heads, lq, lk)
    assert np.max(np.abs(weights.data - wref)) <= 1e-10
    assert np.max(np.abs(out.data - want)) <= 1e-10


def test_attention_rows_sum_to_one():
    rng = SeededRng(4)
    attn = MultiHeadAttention(12, 3, rng)
    x = Tensor(rng.normal((2, 7, 12)))
    _, w = attn(x)
    assert np.max(np.abs(w.data.sum(axis=-1) - 1.0)) <= 1e-9


def test_identity_projections_favor_matching_token():
    # orthogonal tokens with identity projections: each query puts the most
    # attention on the key equal to itself
    d = 4
    rng = SeededRng(5)
    attn = MultiHeadAttention(d, 1, rng)
    for proj in (attn.proj_q, attn.proj_k, attn.proj_v, attn.proj_out):
        proj.weight.data[:] = np.eye(d)
        if proj.bias is not None:
            proj.bias.data[:] = 0.0
    toks = np.eye(4)[:2] * 3.0
    _, w = attn(Tensor(toks))
    assert w.data[0, 0, 0] > w.data[0, 0, 1]
    assert w.data[0, 1, 1] > w.data[0, 1, 0]


def test_attention_self_vs_explicit_kv():
    rng = SeededRng(6)
    attn = MultiHeadAttention(8, 2, rng)
    x = Tensor(rng.normal((4, 8)))
    a, _ = attn(x)
    b, _ = attn(x, x, x)
    assert np.array_equal(a.data, b.data)


def test_tied_qkv_shares_one_projection():
    rng = SeededRng(7)
    attn = MultiHeadAttention(8, 2, rng, tied_qkv=True)
    names = dict(attn.named_parameters())
    assert any("proj_shared" in n for n in names)
    assert not any("proj_q" in n for n in names)
    x = Tensor(rng.normal((3, 8)))
    out, w = attn(x)
    assert out.data.shape == (3, 8)
    assert np.max(np.abs(w.data.sum(axis=-1) - 1.0)) <= 1e-9


def test_matched_query_key_init():
    rng = SeededRng(8)
    attn = MultiHeadAttention(16, 4, rng)
    assert np.array_equal(attn.proj_q.weight.data, attn.proj_k.weight.data)
    assert attn.proj_q.weight is not attn.proj_k.weight
    assert not np.array_equal(attn.proj_q.weight.data, attn.proj_v.weight.data)


def test_heads_must_divide_dim():
    with pytest.raises(ConfigError):
        MultiHeadAttention(10, 3, SeededRng(0))


def test_functional_wrapper_validates_heads():
    rng = SeededRng(9)
    attn = MultiHeadAttention(8, 2, rng)
    x = Tensor(rng.normal((3, 8)))
    out, _ = multi_head_attention(x, x, x, 2, attn)
    assert out.data.shape == (3, 8)
    with pytest.raises(ConfigError):
        multi_head_attention(x, x, x, 4, attn)


def test_attention_gradients_match_fd():
    rng = SeededRng(10)
    attn = MultiHeadAttention(6, 2, rng)
    x = rng.normal((3, 6))
    w = rng.normal((3, 6))

    def loss():
        out, _ = attn(Tensor(x))
        return ad.tensor_sum(ad.mul(out, Tensor(w)))

    check_grad(loss, [p for _, p in attn.named_parameters()])


def test_feed_forward_gradients_match_fd():
    rng = SeededRng(11)
    ffn = FeedForward(5, 7, rng)
    x = rng.normal((2, 5))
    w = rng.normal((2, 5))

    def loss():
        return ad.tensor_sum(ad.mul(ffn(Tensor(x)), Tensor(w)))

    check_grad(loss, [p for _, p in ffn.named_parameters()])


# ---------------------------------------------------------------------------
# module registry
# ---------------------------------------------------------------------------


class Tiny(Module):
    def __init__(self, rng):
        super().__init__()
        self.lin = Linear(3, 2, rng)
        self.extra = Parameter(np.ones(4))
        self.blocks = [LayerNorm(2), LayerNorm(2)]


def test_named_parameters_and_counts():
    m = Tiny(SeededRng(12))
    names = [n for n, _ in m.named_parameters()]
    assert "lin.weight" in names and "lin.bias" in names
    assert "extra" in names
    assert "blocks.0.gain" in names and "blocks.1.bias" in names
    assert m.param_count() == 3 * 2 + 2 + 4 + 4 * 2


def test_state_dict_round_trip():
    rng = SeededRng(13)
    a, b = Tiny(rng.child("a")), Tiny(rng.child("b"))
    state = a.state_dict()
    b.load_state_dict(state)
    for (na, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert np.array_equal(pa.data, pb.data), na


def test_load_state_dict_rejects_missing_and_shape():
    m = Tiny(SeededRng(14))
    state = m.state_dict()
    bad = dict(state)
    del bad["extra"]
    with pytest.raises(KeyError):
        m.load_state_dict(bad)
    wrong = dict(state)
    wrong["extra"] = np.ones(5)
    with pytest.raises(ValueError):
        m.load_state_dict(wrong)


def test_zero_grad_clears_all():
    m = Tiny(SeededRng(15))
    x = Tensor(np.ones((1, 3)))
    out = ad.tensor_sum(m.lin(x))
    ad.backward(out)
    assert np.abs(m.lin.weight.grad).max() > 0
    m.zero_grad()
    assert np.abs(m.lin.weight.grad).max() == 0
