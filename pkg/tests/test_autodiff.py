import numpy as np
import pytest

from ridge import autodiff as ad
from ridge.autodiff import EdgeIndex, Tensor, grad_check, parameter, straight_through
from ridge.errors import NonScalarLoss, ShapeMismatch

TOL = 1e-4


def rand(rng, *shape, lo=-1.0, hi=1.0):
    return parameter(rng.uniform(lo, hi, size=shape))


def scalarize(t: Tensor, rng) -> Tensor:
    """Random linear functional so every output coordinate gets a distinct weight."""
    w = rng.standard_normal(t.shape)
    return ad.sum(ad.mul(t, w))


UNARY = {
    "sigmoid": (ad.sigmoid, (-3, 3)),
    "tanh": (ad.tanh, (-2, 2)),
    "softplus": (ad.softplus, (-4, 4)),
    "log": (ad.log, (0.2, 3)),
    "exp": (ad.exp, (-2, 2)),
    "square": (ad.square, (-2, 2)),
    "neg": (ad.neg, (-2, 2)),
    "sum_axis0": (lambda a: ad.sum(a, axis=0), (-1, 1)),
    "sum_keep": (lambda a: ad.sum(a, axis=1, keepdims=True), (-1, 1)),
    "mean": (lambda a: ad.mean(a, axis=1), (-1, 1)),
    "slice": (lambda a: ad.slice(a, 1, 3, axis=1), (-1, 1)),
    "take": (lambda a: ad.take(a, [0, 2, 2, 1]), (-1, 1)),
    "clip": (lambda a: ad.clip(a, -0.5, 0.5), (-0.45, 0.45)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("point", range(10))
def test_unary_grad(name, point):
    fn, (lo, hi) = UNARY[name]
    rng = np.random.default_rng(1000 * point + len(name))
    x = rand(rng, 3, 4, lo=lo, hi=hi)

    def f():
        return scalarize(fn(x), np.random.default_rng(point))

    assert grad_check(f, [x]) < TOL


BINARY = {
    "add": lambda a, b: ad.add(a, b),
    "sub": lambda a, b: ad.sub(a, b),
    "mul": lambda a, b: ad.elementwise_mul(a, b),
    "div": lambda a, b: ad.div(a, ad.add(ad.square(b), 0.5)),
    "concat0": lambda a, b: ad.concat([a, b], axis=0),
    "concat1": lambda a, b: ad.concat([a, b], axis=1),
}


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("point", range(10))
def test_binary_grad(name, point):
    rng = np.random.default_rng(point)
    a, b = rand(rng, 3, 4), rand(rng, 3, 4)

    def f():
        return scalarize(BINARY[name](a, b), np.random.default_rng(point + 7))

    assert grad_check(f, [a, b]) < TOL


@pytest.mark.parametrize("point", range(10))
def test_matmul_and_row_broadcast_grad(point):
    rng = np.random.default_rng(point)
    a, b, r = rand(rng, 4, 3), rand(rng, 3, 5), rand(rng, 5)

    def f():
        return scalarize(ad.broadcast_add_row(ad.matmul(a, b), r), np.random.default_rng(point))

    assert grad_check(f, [a, b, r]) < TOL


@pytest.mark.parametrize("point", range(10))
def test_broadcast_mul_grad(point):
    rng = np.random.default_rng(point)
    a, col = rand(rng, 4, 3), rand(rng, 4, 1)

    def f():
        return scalarize(ad.mul(a, col), np.random.default_rng(point))

    assert grad_check(f, [a, col]) < TOL


@pytest.mark.parametrize("point", range(10))
def test_neighbor_mean_grad(point):
    rng = np.random.default_rng(point)
    src = np.array([0, 1, 2, 3, 1, 0, 4])
    dst = np.array([1, 0, 1, 2, 3, 4, 0])
    index = EdgeIndex(src, dst, 6)  # node 5 receives nothing
    w = rand(rng, 7, lo=0.2, hi=1.0)
    x = rand(rng, 6, 3)

    def f():
        return scalarize(ad.neighbor_mean(w, x, index), np.random.default_rng(point))

    assert grad_check(f, [w, x]) < TOL


def test_neighbor_mean_values():
    index = EdgeIndex([0, 2, 1], [1, 1, 0], 3)
    x = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 4.0]])
    out = ad.neighbor_mean(np.array([1.0, 3.0, 2.0]), x, index).data
    np.testing.assert_allclose(out[1], (1.0 * x[0] + 3.0 * x[2]) / 4.0)
    np.testing.assert_allclose(out[0], x[1])
    np.testing.assert_allclose(out[2], 0.0)
    # zero weight everywhere into a node -> zero row
    out = ad.neighbor_mean(np.array([0.0, 0.0, 1.0]), x, index).data
    np.testing.assert_allclose(out[1], 0.0)


def test_trivial_values():
    assert ad.sigmoid(0.0).item() == 0.5
    assert ad.softplus(0.0).item() == pytest.approx(np.log(2), abs=1e-12)
    a = np.arange(6.0).reshape(2, 3)
    eye = np.eye(3)[:, :2]
    np.testing.assert_array_equal(ad.matmul(a, eye).data, a[:, :2])


def test_backward_examples():
    x = parameter([1.0, 2.0, 3.0])
    ad.backward(ad.sum(ad.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])
    y = parameter(1.5)
    ad.backward(ad.add(y, y))
    assert y.grad == 2.0


def test_sigmoid_of_dot_finite_difference():
    rng = np.random.default_rng(3)
    w = rand(rng, 5, 1)
    x = rng.standard_normal((1, 5))
    assert grad_check(lambda: ad.sum(ad.sigmoid(ad.matmul(x, w))), [w], h=1e-5) < TOL


def test_quadratic_bowl_exact():
    rng = np.random.default_rng(0)
    x = rand(rng, 4)
    err = grad_check(lambda: ad.sum(ad.square(ad.sub(x, 0.3))), [x])
    assert err < 1e-8


def test_fan_out_accumulation_order_independent():
    rng = np.random.default_rng(1)
    x = rand(rng, 3)
    ad.backward(ad.sum(ad.add(ad.mul(x, 2.0), ad.square(x))))
    g1 = x.grad.copy()
    x.zero_grad()
    ad.backward(ad.sum(ad.add(ad.square(x), ad.mul(x, 2.0))))
    np.testing.assert_allclose(g1, x.grad)
    np.testing.assert_allclose(g1, 2.0 + 2.0 * x.data)


def test_leaf_grads_accumulate_until_zeroed():
    x = parameter([1.0])
    ad.backward(ad.sum(ad.mul(x, 3.0)))
    ad.backward(ad.sum(ad.mul(x, 3.0)))
    assert x.grad[0] == 6.0


def test_forward_values_not_mutated():
    rng = np.random.default_rng(2)
    a, b = rand(rng, 3, 3), rand(rng, 3, 3)
    before = a.data.copy(), b.data.copy()
    loss = ad.sum(ad.tanh(ad.matmul(a, b)))
    ad.backward(loss)
    np.testing.assert_array_equal(a.data, before[0])
    np.testing.assert_array_equal(b.data, before[1])


def test_non_scalar_loss():
    with pytest.raises(NonScalarLoss):
        ad.backward(parameter([1.0, 2.0]))


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeMismatch):
        ad.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(ShapeMismatch):
        ad.broadcast_add_row(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ShapeMismatch):
        ad.concat([np.ones((2, 3)), np.ones((3, 2))], axis=0)


def test_straight_through_identity_and_zero():
    p = parameter([0.2, 0.7, 0.9])
    u = np.array([0.5, 0.5, 0.5])
    s = ad.bernoulli_st(p, u)
    np.testing.assert_array_equal(s.data, [0.0, 1.0, 1.0])
    g = np.array([1.0, -2.0, 3.0])
    ad.backward(ad.sum(ad.mul(s, g)))
    np.testing.assert_array_equal(p.grad, g)  # identity Jacobian
    p.zero_grad()
    with straight_through(False):
        s = ad.bernoulli_st(p, u)
        ad.backward(ad.sum(ad.mul(s, g)))
    np.testing.assert_array_equal(p.grad, 0.0)
    p.zero_grad()
    t = ad.threshold_st(p)
    np.testing.assert_array_equal(t.data, [0.0, 1.0, 1.0])
    ad.backward(ad.sum(ad.mul(t, g)))
    np.testing.assert_array_equal(p.grad, g)
