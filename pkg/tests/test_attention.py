import numpy as np
import pytest

from phynf.attention import (
    AttentionParams,
    EmptyBatchError,
    attention_weights,
    attentive_fuse,
    init_attention,
    self_attention,
)
from phynf.diffcore import DimensionError, Tensor, grad, no_grad, tsum

from _oracles import fd_grad, loop_attention, rel_err


def _params(rng, d, scale=1.0):
    mats = [Tensor(rng.normal(size=(d, d)) * scale, requires_grad=True) for _ in range(3)]
    vecs = [Tensor(rng.normal(size=d) * scale, requires_grad=True) for _ in range(3)]
    return AttentionParams(*mats, *vecs)


def _raw(p):
    return [t.data for t in (p.omega_q, p.omega_k, p.omega_v, p.beta_q, p.beta_k, p.beta_v)]


def test_single_input_weight_is_one(rng):
    p = _params(rng, 3)
    x = rng.normal(size=(1, 3))
    assert attention_weights(Tensor(x), p).data.tolist() == [[1.0]]
    out = self_attention(Tensor(x), p).data[0]
    np.testing.assert_allclose(out, p.beta_v.data + p.omega_v.data @ x[0], rtol=0, atol=1e-15)


def test_uniform_when_queries_and_keys_vanish(rng):
    p = _params(rng, 2)
    for t in (p.omega_q, p.omega_k, p.beta_q, p.beta_k):
        t.data[...] = 0.0
    x = rng.normal(size=(4, 2))
    v = x @ p.omega_v.data.T + p.beta_v.data
    out = self_attention(Tensor(x), p).data
    np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (4, 1)), rtol=0, atol=1e-14)


def test_matrix_form_matches_pairwise_loop(rng):
    p = _params(rng, 2)
    x = rng.normal(size=(3, 2))
    np.testing.assert_allclose(self_attention(Tensor(x), p).data, loop_attention(x, *_raw(p)), rtol=0, atol=1e-12)


def test_properties_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n, d = rng.integers(1, 7), rng.integers(1, 5)
        p = _params(rng, d)
        x = rng.normal(size=(n, d))
        A = attention_weights(Tensor(x), p).data
        assert np.all(A >= 0)
        np.testing.assert_allclose(A.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        perm = rng.permutation(n)
        out = self_attention(Tensor(x), p).data
        np.testing.assert_allclose(self_attention(Tensor(x[perm]), p).data, out[perm], rtol=0, atol=1e-12)
        np.testing.assert_allclose(out, loop_attention(x, *_raw(p)), rtol=0, atol=1e-12)


def test_empty_batch():
    p = init_attention(2, np.random.default_rng(0))
    with pytest.raises(EmptyBatchError):
        self_attention(Tensor(np.zeros((0, 2))), p)


def test_width_mismatch():
    p = init_attention(2, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        self_attention(Tensor(np.zeros((3, 4))), p)


def test_parameter_count_is_batch_independent():
    p = init_attention(5, np.random.default_rng(0))
    assert sum(t.size for t in p.parameters().values()) == 3 * 25 + 3 * 5


def test_init_is_near_uniform():
    p = init_attention(15, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(10, 15))
    A = attention_weights(Tensor(x), p).data
    assert np.max(np.abs(A - 0.1)) < 0.05
    assert all(np.all(b.data == 0) for b in (p.beta_q, p.beta_k, p.beta_v))


def test_gradients_match_finite_differences(rng):
    p = _params(rng, 3, scale=0.7)
    x = Tensor(rng.normal(size=(4, 3)))
    w = rng.normal(size=(4, 3))

    def f():
        with no_grad():
            return float(np.sum(self_attention(x, p).data * w))

    params = list(p.parameters().values())
    grads = grad(tsum(self_attention(x, p) * Tensor(w)), params)
    for name, t, g in zip(p.parameters(), params, grads):
        ref = fd_grad(f, t.data)
        if name.endswith("beta_k"):
            # a key bias shifts every logit of a query equally; softmax ignores it
            assert np.max(np.abs(g.data)) < 1e-12 and np.max(np.abs(ref)) < 1e-9
        else:
            assert rel_err(g.data, ref) < 1e-4


def test_fuse_arithmetic():
    assert attentive_fuse(Tensor([1.0, 2.0]), Tensor([0.5, -1.0])).data.tolist() == [1.5, 0.0]
    z = np.array([[0.3, -0.7]])
    assert attentive_fuse(Tensor(z), Tensor(np.zeros((1, 2)))).data.tolist() == z.tolist()
    assert attentive_fuse(Tensor(np.zeros((1, 2))), Tensor([[3.0, 4.0]])).data.tolist() == [[0.0, 0.0]]
    with pytest.raises(DimensionError):
        attentive_fuse(Tensor(np.zeros(2)), Tensor(np.zeros(3)))
