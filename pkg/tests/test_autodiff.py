import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pglab import autodiff as ad
from pglab.autodiff import ShapeError, Tensor


def leaf(x):
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


def jvp_error(fn, inputs, rng, eps=1e-6):
    """Relative error between <grad, v> from backprop and a central difference along v."""
    xs = [leaf(x) for x in inputs]
    w = rng.standard_normal(fn(*xs).shape)
    ad.backward(ad.sum(ad.mul(fn(*xs), w)))
    vs = [rng.standard_normal(x.shape) for x in xs]
    analytic = sum(float(np.sum(x.grad * v)) for x, v in zip(xs, vs))

    def f(sign):
        with ad.no_grad():
            out = fn(*[Tensor(x.data + sign * eps * v) for x, v in zip(xs, vs)])
        return float(np.sum(out.data * w))

    numeric = (f(1) - f(-1)) / (2 * eps)
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


# hand examples ---------------------------------------------------------------


def test_masked_softmax_uniform():
    np.testing.assert_array_equal(ad.masked_softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_masked_softmax_hides_entries():
    y = ad.masked_softmax(Tensor([5.0, 9.0, 3.0]), np.array([True, False, True])).data
    assert y[1] == 0.0
    assert y[0] == pytest.approx(math.exp(2) / (1 + math.exp(2)), abs=1e-12)
    assert y[0] == pytest.approx(0.8808, abs=1e-4)


def test_scatter_add_repeated_index():
    y = ad.scatter_add(Tensor([0.2, 0.3, 0.5]), np.array([5, 7, 5]), 9).data
    expect = np.zeros(9)
    expect[5], expect[7] = 0.7, 0.3
    np.testing.assert_allclose(y, expect, atol=1e-15)


def test_stop_gradient_product():
    x = leaf(2.0)
    y = ad.mul(ad.stop_gradient(x), x)
    ad.backward(y)
    assert y.item() == 4.0
    assert x.grad == 2.0


def test_stop_gradient_alone():
    x = leaf(7.0)
    y = ad.add(ad.stop_gradient(x), 0.0)
    ad.backward(y)
    assert x.grad is None or x.grad == 0.0


def test_product_rule():
    x, y = leaf(2.0), leaf(3.0)
    ad.backward(ad.mul(x, y))
    assert (x.grad, y.grad) == (3.0, 2.0)


def test_tanh_at_zero():
    x = leaf(0.0)
    ad.backward(ad.tanh(x))
    assert x.grad == 1.0


def test_sum_of_softmax_has_zero_gradient():
    v = leaf(np.random.default_rng(0).standard_normal(7))
    ad.backward(ad.sum(ad.masked_softmax(v)))
    np.testing.assert_allclose(v.grad, 0.0, atol=1e-15)


def test_grad_check_square():
    x = leaf(3.0)
    err = ad.grad_check(lambda: ad.mul(x, x), [x], epsilon=1e-5)
    assert err < 1e-6


# errors -------------------------------------------------------------------------


def test_shape_mismatch_names_primitive():
    with pytest.raises(ShapeError, match=r"add.*\(2,\).*\(3,\)"):
        ad.add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))
    with pytest.raises(ShapeError, match="matmul"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_log_rejects_non_positive():
    with pytest.raises(ValueError, match="log"):
        ad.log(Tensor([1.0, 0.0]))


def test_safe_log_clamps():
    assert ad.safe_log(Tensor([0.0])).data[0] == pytest.approx(math.log(1e-12))


def test_backward_needs_scalar():
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(leaf([1.0, 2.0]))


def test_grad_check_rejects_non_finite():
    x = leaf(-1.0)
    with pytest.raises(ValueError, match="non-finite"):
        ad.grad_check(lambda: ad.mul(Tensor(np.inf), x), [x])


def test_gradients_accumulate_until_zeroed():
    x = leaf(1.5)
    ad.backward(ad.mul(x, 2.0))
    ad.backward(ad.mul(x, 2.0))
    assert x.grad == 4.0
    x.zero_grad()
    assert x.grad is None


def test_no_grad_builds_no_graph():
    x = leaf(1.0)
    with ad.no_grad():
        y = ad.mul(x, x)
    assert not y.requires_grad


# primitive Jacobians against central differences ---------------------------------

shapes = st.tuples(st.integers(1, 3), st.integers(1, 4))
seeds = st.integers(0, 2**31 - 1)

UNARY = {
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "exp": ad.exp,
    "neg": ad.neg,
    "softmax": ad.masked_softmax,
    "sum0": lambda x: ad.sum(x, axis=0),
    "sum_keep": lambda x: ad.sum(x, axis=-1, keepdims=True),
    "reshape": lambda x: ad.reshape(x, (-1,)),
    "slice": lambda x: ad.slice_last(x, 0, 1),
    "getitem": lambda x: ad.getitem(x, (slice(None), np.array([0, 0]))),
}


@settings(max_examples=25, deadline=None)
@given(name=st.sampled_from(sorted(UNARY)), shape=shapes, seed=seeds)
def test_unary_jacobians(name, shape, seed):
    rng = np.random.default_rng(seed)
    assert jvp_error(UNARY[name], [rng.standard_normal(shape)], rng) < 1e-6


def test_log_jacobian():
    rng = np.random.default_rng(1)
    assert jvp_error(ad.log, [rng.uniform(0.5, 2.0, (3, 4))], rng) < 1e-6


BINARY = {
    "add": ad.add,
    "sub": ad.sub,
    "mul": ad.mul,
    "minimum": ad.minimum,
    "concat": lambda a, b: ad.concat([a, b], axis=-1),
    "stack": lambda a, b: ad.stack([a, b], axis=1),
}


@settings(max_examples=25, deadline=None)
@given(name=st.sampled_from(sorted(BINARY)), shape=shapes, seed=seeds, broadcast=st.booleans())
def test_binary_jacobians(name, shape, seed, broadcast):
    rng = np.random.default_rng(seed)
    b_shape = (1, shape[1]) if broadcast and name in ("add", "sub", "mul", "minimum") else shape
    assert jvp_error(BINARY[name], [rng.standard_normal(shape), rng.standard_normal(b_shape)], rng) < 1e-6


@settings(max_examples=20, deadline=None)
@given(m=st.integers(1, 4), k=st.integers(1, 4), n=st.integers(1, 4), batch=st.booleans(), seed=seeds)
def test_matmul_jacobian(m, k, n, batch, seed):
    rng = np.random.default_rng(seed)
    a_shape = (2, m, k) if batch else (m, k)
    assert jvp_error(ad.matmul, [rng.standard_normal(a_shape), rng.standard_normal((k, n))], rng) < 1e-6


@settings(max_examples=20, deadline=None)
@given(L=st.integers(2, 6), size=st.integers(6, 9), seed=seeds)
def test_scatter_add_jacobian_and_mass(L, size, seed):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, size, (2, L))
    p = rng.random((2, L))
    assert jvp_error(lambda x: ad.scatter_add(x, idx, size), [p], rng) < 1e-6
    out = ad.scatter_add(Tensor(p), idx, size).data
    np.testing.assert_allclose(out.sum(axis=1), p.sum(axis=1), rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(shape=shapes, seed=seeds)
def test_masked_softmax_properties(shape, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape) * 10
    mask = rng.random(shape) < 0.6
    mask[:, 0] = True
    y = ad.masked_softmax(Tensor(x), mask).data
    assert np.all(y[~mask] == 0.0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
    assert jvp_error(lambda t: ad.masked_softmax(t, mask), [x], rng) < 1e-6


@settings(max_examples=15, deadline=None)
@given(shape=shapes, seed=seeds)
def test_stop_gradient_adjoint_is_zero(shape, seed):
    rng = np.random.default_rng(seed)
    x = leaf(rng.standard_normal(shape))
    y = ad.stop_gradient(x)
    ad.backward(ad.sum(ad.mul(ad.tanh(y), ad.exp(y))))
    assert x.grad is None or not np.any(x.grad)


def test_lstm_cell_matches_composed_step():
    from pglab.model import lstm_step

    rng = np.random.default_rng(3)
    H = 3
    xp, h, c = rng.standard_normal((2, 4 * H)), rng.standard_normal((2, H)), rng.standard_normal((2, H))
    Wh = rng.standard_normal((H, 4 * H))
    fused = ad.lstm_cell(Tensor(xp), Tensor(h), Tensor(c), Tensor(Wh)).data
    h2, c2 = lstm_step(Tensor(xp), Tensor(h), Tensor(c), Tensor(Wh), H)
    np.testing.assert_allclose(fused, np.concatenate([h2.data, c2.data], axis=-1), atol=1e-14)
    assert jvp_error(lambda a, b, d, w: ad.lstm_cell(a, b, d, w), [xp, h, c, Wh], rng) < 1e-6


def test_lstm_sequence_jacobian():
    rng = np.random.default_rng(4)
    H = 2
    assert jvp_error(ad.lstm_sequence, [rng.standard_normal((2, 5, 4 * H)), rng.standard_normal((H, 4 * H))], rng) < 1e-6
