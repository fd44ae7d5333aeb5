import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmsdnet import tensor as T
from mmsdnet.attention import (
    AttentionHeads,
    ConfigError,
    causal_mask,
    multi_head_attention,
    positional_encoding,
    scaled_dot_attention,
)
from mmsdnet.gradcheck import finite_diff_check
from mmsdnet.tensor import ContractError, Tensor

from oracles import attention_loop, mha_loop


@pytest.fixture
def rng():
    return np.random.default_rng(7)


# ---------------------------------------------------------------------------
# scaled dot-product attention
# ---------------------------------------------------------------------------


def test_single_key_returns_value_row(rng):
    V = rng.normal(size=(1, 3))
    out = scaled_dot_attention(Tensor(rng.normal(size=(4, 2))), Tensor(rng.normal(size=(1, 2))), Tensor(V))
    assert np.allclose(out.data, np.repeat(V, 4, axis=0), atol=1e-15)


def test_orthogonal_queries_give_mean_of_values(rng):
    Q = Tensor([[1.0, 0.0], [2.0, 0.0]])
    K = Tensor([[0.0, 1.0], [0.0, -3.0], [0.0, 0.5]])
    V = rng.normal(size=(3, 4))
    out = scaled_dot_attention(Q, K, Tensor(V))
    assert np.allclose(out.data, np.tile(V.mean(axis=0), (2, 1)), atol=1e-15)


def test_matches_scalar_loop(rng):
    Q, K, V = rng.normal(size=(2, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 5))
    out = scaled_dot_attention(Tensor(Q), Tensor(K), Tensor(V)).data
    assert np.abs(out - attention_loop(Q, K, V)).max() < 1e-12


def test_masked_matches_scalar_loop(rng):
    Q, K, V = rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    m = causal_mask(4)
    out = scaled_dot_attention(Tensor(Q), Tensor(K), Tensor(V), m).data
    assert np.abs(out - attention_loop(Q, K, V, m)).max() < 1e-12


def test_all_false_mask_row_rejected():
    m = np.array([[True, False], [False, False]])
    with pytest.raises(ContractError):
        scaled_dot_attention(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))), m)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(1, 6))
def test_output_within_value_envelope(seed, n_q, n_k):
    r = np.random.default_rng(seed)
    V = r.normal(size=(n_k, 3))
    out = scaled_dot_attention(Tensor(r.normal(scale=3, size=(n_q, 4))), Tensor(r.normal(size=(n_k, 4))), Tensor(V)).data
    tol = 1e-12
    assert (out >= V.min(axis=0) - tol).all() and (out <= V.max(axis=0) + tol).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_properties(seed):
    r = np.random.default_rng(seed)
    Q, K, V = r.normal(size=(5, 4)), r.normal(size=(6, 4)), r.normal(size=(6, 3))
    base = scaled_dot_attention(Tensor(Q), Tensor(K), Tensor(V)).data
    pq = r.permutation(5)
    out_q = scaled_dot_attention(Tensor(Q[pq]), Tensor(K), Tensor(V)).data
    assert np.abs(out_q - base[pq]).max() < 1e-12
    pk = r.permutation(6)
    out_k = scaled_dot_attention(Tensor(Q), Tensor(K[pk]), Tensor(V[pk])).data
    assert np.abs(out_k - base).max() < 1e-12


def test_attention_grad(rng):
    w = rng.normal(size=(3, 2))
    f = lambda p: T.tensor_sum(T.mul(scaled_dot_attention(p["q"], p["k"], p["v"], causal_mask(3)), Tensor(w)))  # noqa: E731
    err = finite_diff_check(f, {"q": rng.normal(size=(3, 4)), "k": rng.normal(size=(3, 4)), "v": rng.normal(size=(3, 2))})
    assert err < 1e-6


# ---------------------------------------------------------------------------
# multi-head attention
# ---------------------------------------------------------------------------


def test_single_head_identity_projections_equal_plain_attention(rng):
    x = rng.normal(size=(4, 6))
    I = Tensor(np.eye(6))
    out = multi_head_attention(Tensor(x), Tensor(x), Tensor(x), AttentionHeads(1, I, I, I, I)).data
    ref = scaled_dot_attention(Tensor(x), Tensor(x), Tensor(x)).data
    assert np.abs(out - ref).max() < 1e-14


@pytest.mark.parametrize("h", [2, 3])
def test_multi_head_matches_per_head_loop(rng, h):
    d = 6
    ws = [rng.normal(scale=0.5, size=(d, d)) for _ in range(4)]
    xq, xkv = rng.normal(size=(3, d)), rng.normal(size=(4, d))
    heads = AttentionHeads(h, *[Tensor(w) for w in ws])
    out = multi_head_attention(Tensor(xq), Tensor(xkv), Tensor(xkv), heads).data
    assert np.abs(out - mha_loop(xq, xkv, xkv, *ws, h)).max() < 1e-12


def test_multi_head_requires_divisible_width():
    w = Tensor(np.eye(6))
    with pytest.raises(ConfigError):
        AttentionHeads(4, w, w, w, w)


def test_multi_head_projection_grads(rng):
    x = rng.normal(size=(4, 4))
    w = rng.normal(size=(4, 4))

    def f(p):
        heads = AttentionHeads(2, p["w_q"], p["w_k"], p["w_v"], p["w_o"])
        return T.tensor_sum(T.mul(multi_head_attention(Tensor(x), Tensor(x), Tensor(x), heads, causal_mask(4)), Tensor(w)))

    params = {k: rng.normal(scale=0.5, size=(4, 4)) for k in ("w_q", "w_k", "w_v", "w_o")}
    assert finite_diff_check(f, params) < 1e-4


# ---------------------------------------------------------------------------
# causal mask
# ---------------------------------------------------------------------------


def test_causal_mask_shapes():
    assert causal_mask(1).tolist() == [[True]]
    assert causal_mask(3).sum(axis=1).tolist() == [1, 2, 3]
    m = causal_mask(5)
    assert all(m[i, j] == (j <= i) for i in range(5) for j in range(5))


def test_causal_perturbation_leaves_earlier_positions_unchanged(rng):
    n, d = 6, 4
    ws = [Tensor(rng.normal(scale=0.5, size=(d, d))) for _ in range(4)]
    heads = AttentionHeads(2, *ws)
    x = rng.normal(size=(n, d))
    base = multi_head_attention(Tensor(x), Tensor(x), Tensor(x), heads, causal_mask(n)).data
    for j in range(1, n):
        x2 = x.copy()
        x2[j] += rng.normal(size=d) * 10
        out = multi_head_attention(Tensor(x2), Tensor(x2), Tensor(x2), heads, causal_mask(n)).data
        assert out[:j].tobytes() == base[:j].tobytes()
        assert not np.array_equal(out[j], base[j])


# ---------------------------------------------------------------------------
# positional encoding
# ---------------------------------------------------------------------------


def test_pe_row_zero():
    pe = positional_encoding(4, 8)
    assert np.array_equal(pe[0, 0::2], np.zeros(4))
    assert np.array_equal(pe[0, 1::2], np.ones(4))


@pytest.mark.parametrize("d", [2, 8, 16, 64])
def test_pe_first_column_at_pos_one(d):
    assert positional_encoding(3, d)[1, 0] == pytest.approx(0.841471, abs=1e-6)


def test_pe_matches_formula_and_range():
    pe = positional_encoding(50, 10)
    assert (np.abs(pe) <= 1).all()
    for pos in (0, 7, 49):
        for i in range(5):
            assert pe[pos, 2 * i] == pytest.approx(math.sin(pos / 10000 ** (2 * i / 10)), abs=1e-15)
            assert pe[pos, 2 * i + 1] == pytest.approx(math.cos(pos / 10000 ** (2 * i / 10)), abs=1e-15)


def test_pe_rows_independent_of_table_length():
    assert np.array_equal(positional_encoding(5, 6), positional_encoding(20, 6)[:5])


def test_pe_odd_width_rejected():
    with pytest.raises(ConfigError):
        positional_encoding(4, 7)
