import numpy as np
import pytest

from concm.autodiff import Tape, grad_check
from concm.errors import OrderError, ShapeError


def test_linear_identity_weights_passthrough():
    t = Tape()
    x = t.input("x")
    w = t.constant(np.eye(3))
    y = t.matmul(x, w)
    feed = np.arange(6, dtype=float).reshape(2, 3)
    t.forward({"x": feed})
    np.testing.assert_array_equal(t.value(y), feed)


def test_softmax_symmetry():
    t = Tape()
    s = t.softmax(t.constant(np.array([[0.0, 0.0]])))
    t.forward({})
    np.testing.assert_allclose(t.value(s), [[0.5, 0.5]])


def test_two_layer_mlp_matches_straight_line_evaluation():
    gen = np.random.default_rng(11)
    w1, b1 = gen.standard_normal((4, 6)), gen.standard_normal((1, 6))
    w2, b2 = gen.standard_normal((6, 2)), gen.standard_normal((1, 2))
    x = gen.standard_normal((5, 4))

    t = Tape()
    xn = t.input("x")
    h = t.softplus(t.add(t.matmul(xn, t.param("w1", w1)), t.param("b1", b1)))
    out = t.add(t.matmul(h, t.param("w2", w2)), t.param("b2", b2))
    t.forward({"x": x})

    manual = np.logaddexp(0.0, x @ w1 + b1) @ w2 + b2
    np.testing.assert_allclose(t.value(out), manual, rtol=1e-15, atol=1e-15)


def test_quadratic_loss_gradient_is_x():
    t = Tape()
    x = t.param("x", np.array([[1.0, -2.0, 3.0]]))
    loss = t.scale(t.sum(t.mul(x, x)), 0.5)
    t.forward({})
    np.testing.assert_allclose(t.backward(loss)["x"], [[1.0, -2.0, 3.0]])
    assert grad_check(t, {}, loss) <= 1e-7


def test_inner_product_gradient_is_other_operand():
    a = np.array([[2.0, 0.5, -1.0]])
    t = Tape()
    x = t.param("x", np.zeros((1, 3)))
    loss = t.inner(t.constant(a), x)
    t.forward({})
    np.testing.assert_array_equal(t.backward(loss)["x"], a)


def test_broadcast_gradients():
    gen = np.random.default_rng(3)
    t = Tape()
    m = t.param("m", gen.standard_normal((4, 3)))
    row = t.param("row", gen.standard_normal((1, 3)))
    col = t.param("col", gen.standard_normal((4, 1)))
    out = t.mul(t.add(m, row), col)
    loss = t.mean(t.mul(out, out))
    assert grad_check(t, {}, loss) <= 1e-7


def test_normalize_softmax_log_chain_gradients():
    gen = np.random.default_rng(5)
    t = Tape()
    p = t.param("p", gen.standard_normal((3, 4)))
    z = t.l2_normalize(p)
    sm = t.softmax(t.scale(z, 3.0))
    loss = t.scale(t.mean(t.log(sm)), -1.0)
    assert grad_check(t, {}, loss) <= 1e-6
    t2 = Tape()
    q = t2.param("q", gen.standard_normal((2, 5)))
    loss2 = t2.scale(t2.mean(t2.log_softmax(q)), -1.0)
    assert grad_check(t2, {}, loss2) <= 1e-6


def test_backward_before_forward_raises():
    t = Tape()
    x = t.param("x", np.ones((1, 2)))
    loss = t.sum(x)
    with pytest.raises(OrderError):
        t.backward(loss)


def test_shape_mismatch_raises():
    t = Tape()
    a = t.constant(np.ones((2, 3)))
    b = t.constant(np.ones((3, 3)))
    c = t.add(a, b)
    with pytest.raises(ShapeError):
        t.forward({})
    t2 = Tape()
    m = t2.matmul(t2.constant(np.ones((2, 3))), t2.constant(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        t2.forward({})


def test_backward_requires_scalar_loss():
    t = Tape()
    x = t.param("x", np.ones((2, 2)))
    y = t.mul(x, x)
    t.forward({})
    with pytest.raises(ShapeError):
        t.backward(y)


def test_forward_bit_reproducible():
    gen = np.random.default_rng(8)
    t = Tape()
    x = t.input("x")
    w = t.param("w", gen.standard_normal((6, 6)))
    out = t.sum(t.softplus(t.matmul(t.l2_normalize(x), w)))
    feed = {"x": gen.standard_normal((4, 6))}
    t.forward(feed)
    first = t.value(out).copy()
    t.forward(feed)
    assert np.array_equal(first, t.value(out))


def test_missing_feed_raises():
    t = Tape()
    t.input("x")
    with pytest.raises(OrderError):
        t.forward({})
