"""Reverse-mode engine: primitives against central differences, graph bookkeeping, errors."""
import numpy as np
import pytest

from smgan import autodiff as ad
from smgan.autodiff import GraphError, NonFiniteError, ShapeError, Value, check_gradients, grad, no_grad, numerical_grad


def _rel(f, *inputs):
    return check_gradients(f, list(inputs))


def test_scalar_chain_rule_exact():
    # f = x^2 * y + y^3 at (3, 2): df/dx = 2xy = 12, df/dy = x^2 + 3y^2 = 21
    x, y = Value(3.0, requires_grad=True), Value(2.0, requires_grad=True)
    f = x * x * y + y**3
    f.backward()
    assert f.item() == 26.0
    assert x.grad.item() == 12.0
    assert y.grad.item() == 21.0


UNARY = {
    "exp": ad.exp,
    "log": lambda v: ad.log(v),
    "sqrt": ad.sqrt,
    "tanh": ad.tanh,
    "abs": ad.abs,
    "square": ad.square,
    "power_3": lambda v: ad.power(v, 3.0),
    "relu": ad.relu,
    "leaky": lambda v: ad.leaky_relu(v, 0.2),
    "neg": lambda v: -v,
    "reciprocal": lambda v: 1.0 / v,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitives_match_finite_differences(name, rng):
    fn = UNARY[name]
    data = rng.uniform(0.2, 2.0, size=(3, 4))
    if name in ("abs", "relu", "leaky", "tanh", "neg", "power_3", "square"):
        data *= rng.choice([-1.0, 1.0], size=data.shape)
    x = Value(data, requires_grad=True)
    w = rng.normal(size=data.shape)
    assert _rel(lambda: ad.sum(fn(x) * w), x) < 1e-5


@pytest.mark.parametrize(
    "op",
    [
        lambda a, b: a + b,
        lambda a, b: a - b,
        lambda a, b: a * b,
        lambda a, b: a / b,
    ],
    ids=["add", "sub", "mul", "div"],
)
def test_binary_broadcasting_gradients(op, rng):
    a = Value(rng.uniform(0.5, 2, size=(4, 1, 3)), requires_grad=True)
    b = Value(rng.uniform(0.5, 2, size=(5, 1)), requires_grad=True)
    w = rng.normal(size=(4, 5, 3))
    assert _rel(lambda: ad.sum(op(a, b) * w), a, b) < 1e-5
    loss = ad.sum(op(a, b) * w)
    a.grad = b.grad = None
    loss.backward()
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


def test_shape_ops_gradients(rng):
    x = Value(rng.normal(size=(2, 3, 4)), requires_grad=True)
    w = rng.normal(size=(4, 3, 2))
    assert _rel(lambda: ad.sum(ad.transpose(x, (2, 1, 0)) * w), x) < 1e-6
    assert _rel(lambda: ad.sum(ad.reshape(x, (6, 4)) * w.reshape(6, 4)), x) < 1e-6
    assert _rel(lambda: ad.sum(x[:, 1:, ::2] * 2.5), x) < 1e-6
    assert _rel(lambda: ad.sum(ad.pad(x, [(0, 0), (1, 2), (0, 1)]) ** 2), x) < 1e-6
    assert _rel(lambda: ad.sum(ad.concat([x, x * 2], axis=1) ** 2), x) < 1e-6
    assert _rel(lambda: ad.sum(ad.stack([x, x * x], axis=0) * 1.5), x) < 1e-6
    assert _rel(lambda: ad.sum(ad.mean(x, axis=(0, 2)) ** 2), x) < 1e-6


def test_fancy_index_accumulates_repeats():
    x = Value(np.arange(4.0), requires_grad=True)
    y = ad.sum(x[np.array([0, 0, 3])])
    y.backward()
    np.testing.assert_array_equal(x.grad.data, [2.0, 0.0, 0.0, 1.0])


def test_matmul_and_dense(rng):
    a = Value(rng.normal(size=(3, 5)), requires_grad=True)
    w = Value(rng.normal(size=(4, 5)), requires_grad=True)
    b = Value(rng.normal(size=4), requires_grad=True)
    assert _rel(lambda: ad.sum(ad.tanh(ad.dense(a, w, b))), a, w, b) < 1e-6
    np.testing.assert_allclose(ad.dense(a, w, b).data, a.data @ w.data.T + b.data)


def test_l2_norm_per_sample_eps_guard():
    x = Value(np.zeros((2, 3)), requires_grad=True)
    n = ad.l2_norm_per_sample(x)
    np.testing.assert_allclose(n.data, 1e-6)
    ad.sum(n).backward()
    assert np.all(np.isfinite(x.grad.data))


def test_leaky_relu_subgradient_at_zero_is_left_slope():
    x = Value(np.array([-1.0, 0.0, 1.0]), requires_grad=True)
    ad.sum(ad.leaky_relu(x, 0.2)).backward()
    np.testing.assert_array_equal(x.grad.data, [0.2, 0.2, 1.0])
    x.grad = None
    ad.sum(ad.relu(x)).backward()
    np.testing.assert_array_equal(x.grad.data, [0.0, 0.0, 1.0])


def test_linearity_of_backward(rng):
    x = Value(rng.normal(size=5), requires_grad=True)
    f = lambda: ad.sum(ad.tanh(x))  # noqa: E731
    g = lambda: ad.sum(x**2)  # noqa: E731
    (gf,) = grad(f(), [x])
    (gg,) = grad(g(), [x])
    (gc,) = grad(2.0 * f() - 3.0 * g(), [x])
    np.testing.assert_allclose(gc.data, 2.0 * gf.data - 3.0 * gg.data, rtol=0, atol=1e-14)


def test_second_order_gradient():
    # d/dx (d/dx x^3) = 6x
    x = Value(np.array([0.5, -2.0]), requires_grad=True)
    (g,) = grad(ad.sum(x**3), [x], create_graph=True)
    (gg,) = grad(ad.sum(g), [x])
    np.testing.assert_allclose(gg.data, 6.0 * x.data)


def test_grad_of_unreachable_input_is_zero():
    x, y = Value(1.0, requires_grad=True), Value(np.ones(3), requires_grad=True)
    gx, gy = grad(x * 2.0, [x, y])
    assert gx.item() == 2.0
    np.testing.assert_array_equal(gy.data, 0.0)


def test_backward_twice_raises():
    x = Value(2.0, requires_grad=True)
    y = x * x
    y.backward()
    with pytest.raises(GraphError):
        y.backward()


def test_backward_requires_scalar():
    x = Value(np.ones(3), requires_grad=True)
    with pytest.raises(GraphError):
        (x * 2).backward()


def test_non_finite_inputs_rejected():
    with pytest.raises(NonFiniteError):
        Value(np.array([1.0, np.nan]))


def test_empty_reduction_raises():
    with pytest.raises(ShapeError):
        ad.sum(Value(np.zeros((0, 3))))


def test_no_grad_builds_no_graph():
    x = Value(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert y.creator is None and not y.requires_grad


def test_gradient_accumulates_over_shared_subexpressions():
    x = Value(1.5, requires_grad=True)
    a = x * x
    y = a + a * a  # dy/dx = 2x + 4x^3
    y.backward()
    assert y.item() == pytest.approx(2.25 + 2.25**2)
    assert x.grad.item() == pytest.approx(3.0 + 4 * 1.5**3, abs=1e-13)


def test_forward_is_bit_deterministic(rng):
    data = rng.normal(size=(2, 1, 5, 9, 9))
    k = rng.normal(size=(3, 1, 3, 3, 3))
    a = ad.conv3d(data, k).data
    b = ad.conv3d(data.copy(), k.copy()).data
    assert a.tobytes() == b.tobytes()


def test_numerical_grad_leaves_input_unchanged(rng):
    x = Value(rng.normal(size=6), requires_grad=True)
    before = x.data.copy()
    numerical_grad(lambda: ad.sum(x**2), x)
    np.testing.assert_array_equal(x.data, before)
