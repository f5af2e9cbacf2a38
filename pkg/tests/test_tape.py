import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from linkedrnn import tape as T
from linkedrnn.train import relative_error

small = settings(max_examples=40, deadline=None)


def mats(shape, lo=-2.0, hi=2.0):
    return arrays(np.float64, shape, elements=st.floats(lo, hi, allow_nan=False))


def _check_op(build, *inputs, tol=1e-6):
    """Analytic vs central-difference gradient of sum(build(...) * weights)."""
    params = [T.Parameter(f"p{k}", x) for k, x in enumerate(inputs)]
    out_shape = build(*params).shape
    weights = np.random.default_rng(0).uniform(0.5, 1.5, size=out_shape)

    def loss():
        return T.total(T.hadamard(build(*params), weights))

    T.backward(loss())
    for p in params:
        numeric = T.finite_diff_grad(loss, p, 1e-5)
        assert relative_error(p.grad, numeric).max() <= tol, p.name


def test_matmul_examples():
    assert np.array_equal(T.matmul(np.eye(2), [[1.0], [2.0]]).value, [[1.0], [2.0]])
    assert np.array_equal(T.matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]]).value, [[3.0], [7.0]])


def test_linear_form_gradient():
    a = T.Parameter("a", [[1.0, 2.0]])
    b = T.const([[5.0], [7.0]])
    T.backward(T.matmul(a, b))
    assert np.array_equal(a.grad, [[5.0, 7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(T.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_elementwise_examples():
    assert T.elementwise("sigmoid", 0.0).item() == 0.5
    assert T.elementwise("tanh", 0.0).item() == 0.0
    assert np.array_equal(T.elementwise("hadamard", [2.0, 3.0], [4.0, 5.0]).value, [[8.0, 15.0]])
    assert np.array_equal(T.elementwise("scale", [1.0, -2.0], 3.0).value, [[3.0, -6.0]])
    with pytest.raises(T.DimensionError):
        T.elementwise("add", np.ones((2, 2)), np.ones((3, 2)))
    with pytest.raises(ValueError):
        T.elementwise("cosh", 1.0)


def test_softmax_examples():
    assert np.allclose(T.softmax_rows([0.0, 0.0, 0.0]).value, [[1 / 3] * 3], rtol=0, atol=1e-15)
    assert np.allclose(T.softmax_rows([math.log(1), math.log(3)]).value, [[0.25, 0.75]], rtol=0, atol=1e-15)
    big = T.softmax_rows([1000.0, 1000.0]).value
    assert np.array_equal(big, [[0.5, 0.5]])


def test_backward_examples():
    x = T.Parameter("x", 3.0)
    T.backward(T.hadamard(x, x))
    assert x.grad[0, 0] == 6.0

    x = T.Parameter("x", 1.0)
    T.backward(T.add(x, x))
    assert x.grad[0, 0] == 2.0

    x = T.Parameter("x", 0.0)
    T.backward(T.sigmoid(x))
    assert x.grad[0, 0] == 0.25


def test_backward_rejects_non_scalar_root():
    with pytest.raises(T.ContractError):
        T.backward(T.Parameter("x", [1.0, 2.0]))


@pytest.mark.parametrize("k", [1, 2, 5, 9])
def test_fan_out_accumulates(k):
    x = T.Parameter("x", 0.7)
    root = x
    for _ in range(k - 1):
        root = T.add(root, x)
    T.backward(root)
    assert x.grad[0, 0] == k


def test_replay_is_deterministic():
    rng = np.random.default_rng(3)
    W = T.Parameter("W", rng.normal(size=(3, 4)))
    x = rng.normal(size=(2, 3))

    def loss():
        return T.mean(T.softmax_rows(T.tanh(T.matmul(x, W))))

    T.backward(loss())
    first = W.grad.copy()
    W.zero_grad()
    T.backward(loss())
    assert np.array_equal(first, W.grad)


def test_gradients_accumulate_until_reset():
    x = T.Parameter("x", 2.0)
    T.backward(T.scale(x, 3.0))
    T.backward(T.scale(x, 3.0))
    assert x.grad[0, 0] == 6.0
    T.zero_grads([x])
    assert x.grad[0, 0] == 0.0


def test_finite_diff_examples():
    theta = T.Parameter("theta", 3.0)
    g = T.finite_diff_grad(lambda: T.hadamard(theta, theta), theta, 1e-5)
    assert abs(g[0, 0] - 6.0) <= 1e-8
    g = T.finite_diff_grad(lambda: 4.2, theta, 1e-5)
    assert g[0, 0] == 0.0
    assert theta.value[0, 0] == 3.0


def test_finite_diff_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        T.finite_diff_grad(lambda: 0.0, T.Parameter("x", 1.0), 0.0)


SEEDS = range(8)


def uniform(seed, *shapes, lo=-2.0, hi=2.0):
    rng = np.random.default_rng(seed)
    return [rng.uniform(lo, hi, size=s) for s in shapes]


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_gradient(seed):
    _check_op(T.matmul, *uniform(seed, (3, 4), (4, 2)))


@pytest.mark.parametrize("op", [T.sigmoid, T.tanh, T.transpose, T.relu])
@pytest.mark.parametrize("seed", SEEDS)
def test_unary_gradients(op, seed):
    (a,) = uniform(seed, (3, 4))
    if op is T.relu:
        a[np.abs(a) < 1e-3] = 0.5  # keep finite differences off the kink
    _check_op(op, a)


@pytest.mark.parametrize("seed", SEEDS)
def test_binary_gradients(seed):
    a, b, row = uniform(seed, (3, 4), (3, 4), (1, 4))
    _check_op(T.add, a, b)
    _check_op(T.sub, a, b)
    _check_op(T.hadamard, a, b)
    _check_op(T.add, a, row)  # broadcast bias
    _check_op(T.hadamard, a, row)
    _check_op(lambda x: T.scale(x, -1.7), a)


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_gradient(seed):
    (a,) = uniform(seed, (3, 5))
    _check_op(T.softmax_rows, a)
    mask = np.array([[1, 1, 0, 1, 0], [1, 0, 0, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
    _check_op(lambda x: T.softmax_rows(x, mask), a)


@pytest.mark.parametrize("seed", SEEDS)
def test_structural_gradients(seed):
    a, b = uniform(seed, (3, 4), (3, 2))
    _check_op(lambda x, y: T.concat_cols([x, y, x]), a, b)
    _check_op(lambda x: T.column(x, 2), a)
    _check_op(lambda x: T.take_rows(x, [2, 0, 2]), a)
    _check_op(lambda x: T.pick(x, [0, 2, 2], [1, 3, 3]), a)
    _check_op(T.mean, a)
    _check_op(T.total, a)


@pytest.mark.parametrize("seed", SEEDS)
def test_log_and_clamp_gradients(seed):
    (a,) = uniform(seed, (2, 3), lo=0.1, hi=2.0)
    _check_op(T.log, a)
    _check_op(lambda x: T.clamp_min(x, 0.05), a)


@small
@given(mats((2, 6), -50.0, 50.0), st.floats(-20.0, 20.0))
def test_softmax_rows_sum_to_one_and_shift_invariant(a, c):
    y = T.softmax_rows(a).value
    assert np.abs(y.sum(axis=1) - 1.0).max() <= 1e-12
    assert (y >= 0).all()
    assert np.abs(T.softmax_rows(a + c).value - y).max() <= 1e-12


def test_masked_softmax_zeroes_masked_entries():
    y = T.softmax_rows([[1.0, 5.0, 2.0]], np.array([[True, False, True]])).value
    assert y[0, 1] == 0.0
    assert abs(y.sum() - 1.0) <= 1e-15


def test_sigmoid_is_stable_at_extremes():
    y = T.sigmoid([[-800.0, 800.0]]).value
    assert np.isfinite(y).all()
    assert y[0, 0] == 0.0 and y[0, 1] == 1.0
