import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linkedrnn import tape as T
from linkedrnn.pooling import AttentionParams, pool, pool_attention, pool_last
from linkedrnn.train import relative_error


def rows(values):
    return [T.const(np.atleast_2d(v)) for v in values]


def random_attention(H, A, seed):
    rng = np.random.default_rng(seed)
    return AttentionParams.from_arrays(rng.uniform(-2, 2, size=(A, H)), rng.uniform(-2, 2, size=(A, 1)))


def test_pool_last():
    assert pool_last(rows([[1.0], [2.0], [3.0]])).item() == 3.0
    assert pool_last(rows([[7.0]])).item() == 7.0
    with pytest.raises(ValueError):
        pool_last([])


def test_single_state_is_returned_with_unit_weight():
    h = np.array([[0.3, -0.8, 2.0]])
    out, w = pool_attention(random_attention(3, 2, 0), rows([h]))
    assert np.array_equal(out.value, h)
    assert w.value.tolist() == [[1.0]]


@pytest.mark.parametrize("seed", range(5))
def test_identical_states_come_back_exactly(seed):
    h = np.random.default_rng(seed).normal(size=(1, 4))
    out, _ = pool_attention(random_attention(4, 3, seed), rows([h] * 6))
    assert np.array_equal(out.value, h)


def test_two_state_hand_value():
    att = AttentionParams.from_arrays([[1.0]], [[1.0]])
    out, w = pool_attention(att, rows([[0.0], [10.0]]))
    e = math.exp(math.tanh(10.0))
    expected = np.array([1.0, e]) / (1.0 + e)
    assert np.abs(w.value[0] - expected).max() <= 1e-15
    assert abs(w.value[0, 0] - 0.268941) <= 1e-6
    assert abs(out.item() - 7.310586) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 4))
def test_weights_form_a_distribution_and_output_is_in_the_hull(seed, n, H):
    rng = np.random.default_rng(seed)
    states = rng.normal(scale=3.0, size=(n, H))
    out, w = pool_attention(random_attention(H, 3, seed), rows(states))
    assert (w.value > 0).all()
    assert abs(w.value.sum() - 1.0) <= 1e-12
    assert (out.value[0] >= states.min(axis=0) - 1e-12).all()
    assert (out.value[0] <= states.max(axis=0) + 1e-12).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_zero_projection_gives_the_uniform_mean(seed, n):
    states = np.random.default_rng(seed).normal(size=(n, 3))
    att = random_attention(3, 2, seed)
    att.W_a.value = np.zeros((2, 3))
    out, w = pool_attention(att, rows(states))
    assert np.abs(w.value - 1.0 / n).max() <= 1e-12
    assert np.abs(out.value[0] - states.mean(axis=0)).max() <= 1e-12


def test_masked_rows_ignore_padding():
    att = random_attention(2, 2, 1)
    a = np.array([[1.0, 2.0], [5.0, -1.0]])
    b = np.array([[0.0, 1.0], [9.0, 9.0]])
    mask = np.array([[True, True], [True, False]])
    out, w = pool_attention(att, [T.const(a), T.const(b)], mask)
    alone, _ = pool_attention(att, rows([a[1]]))
    assert w.value[1].tolist() == [1.0, 0.0]
    assert np.array_equal(out.value[1], alone.value[0])


def test_pool_dispatch():
    states = rows([[1.0], [4.0]])
    assert pool("last", states).item() == 4.0
    with pytest.raises(ValueError):
        pool("attention", states)
    with pytest.raises(ValueError):
        pool("max", states)


@pytest.mark.parametrize("seed", range(4))
def test_attention_gradients(seed):
    att = random_attention(3, 2, seed)
    states = rows(np.random.default_rng(seed + 9).uniform(-2, 2, size=(4, 3)))
    w = np.random.default_rng(seed).uniform(0.5, 1.5, size=(1, 3))

    def loss():
        return T.total(T.hadamard(pool_attention(att, states)[0], w))

    T.backward(loss())
    for p in att.parameters():
        numeric = T.finite_diff_grad(loss, p, 1e-5)
        assert relative_error(p.grad, numeric).max() <= 1e-5, p.name
