"""Convolutions against a scalar-loop oracle, plus gradient and gradient-penalty checks."""
import itertools
import importlib

import numpy as np
import pytest

from smgan import autodiff as ad
from smgan.autodiff import ShapeError, Value, check_gradients

conv_mod = importlib.import_module("smgan.autodiff.conv")


def loop_conv(x, w, stride):
    """Direct sum over every output position and kernel tap."""
    B, C = x.shape[:2]
    F, K = w.shape[0], w.shape[2:]
    out_sp = tuple((n - k) // s + 1 for n, k, s in zip(x.shape[2:], K, stride))
    y = np.zeros((B, F) + out_sp)
    for b, f in itertools.product(range(B), range(F)):
        for o in itertools.product(*[range(n) for n in out_sp]):
            acc = 0.0
            for c in range(C):
                for k in itertools.product(*[range(n) for n in K]):
                    idx = tuple(oi * s + ki for oi, s, ki in zip(o, stride, k))
                    acc += w[(f, c) + k] * x[(b, c) + idx]
            y[(b, f) + o] = acc
    return y


@pytest.mark.parametrize(
    "xs,ws,stride",
    [
        ((2, 3, 7, 6), (4, 3, 3, 3), (1, 1)),
        ((2, 2, 9, 8), (3, 2, 3, 3), (2, 2)),
        ((1, 2, 5, 7, 6), (3, 2, 3, 2, 3), (1, 1, 1)),
        ((2, 1, 4, 6, 6), (2, 1, 1, 3, 3), (1, 2, 1)),
        ((1, 1, 4, 4), (1, 1, 4, 4), (1, 1)),
    ],
)
def test_conv_matches_loop_oracle(xs, ws, stride, rng):
    x, w = rng.normal(size=xs), rng.normal(size=ws)
    np.testing.assert_allclose(ad.conv(x, w, stride=stride).data, loop_conv(x, w, stride), rtol=1e-12, atol=1e-12)


def test_fast_and_general_paths_agree(rng):
    x = rng.normal(size=(3, 4, 6, 9, 8))
    w = rng.normal(size=(5, 4, 3, 3, 3))
    s1 = (1, 1, 1)
    y = conv_mod._conv_forward_s1(x, w)
    np.testing.assert_allclose(y, conv_mod._conv_forward(x, w, s1), atol=1e-12)
    g = rng.normal(size=y.shape)
    np.testing.assert_allclose(
        conv_mod._conv_input_grad_s1(g, w, x.shape[2:]), conv_mod._conv_input_grad(g, w, s1, x.shape[2:]), atol=1e-12
    )
    np.testing.assert_allclose(
        conv_mod._conv_weight_grad_s1(x, g, w.shape[2:]), conv_mod._conv_weight_grad(x, g, s1, w.shape[2:]), atol=1e-10
    )


def test_conv_padding_equals_explicit_zero_pad(rng):
    x, w = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    np.testing.assert_allclose(ad.conv2d(x, w, padding=1).data, loop_conv(padded, w, (1, 1)), atol=1e-12)


def test_conv_bias_broadcasts(rng):
    x, w, b = rng.normal(size=(2, 1, 5, 5)), rng.normal(size=(3, 1, 3, 3)), rng.normal(size=3)
    y = ad.conv2d(x, w, b).data
    np.testing.assert_allclose(y, loop_conv(x, w, (1, 1)) + b[None, :, None, None], atol=1e-12)


@pytest.mark.parametrize(
    "xs,ws,stride,padding",
    [
        ((2, 2, 6, 5), (3, 2, 3, 3), 1, 0),
        ((2, 2, 7, 7), (3, 2, 3, 3), 2, 1),
        ((1, 2, 5, 6, 6), (2, 2, 3, 3, 3), 1, 0),
    ],
)
def test_conv_gradients_match_finite_differences(xs, ws, stride, padding, rng):
    x = Value(rng.normal(size=xs), requires_grad=True)
    w = Value(rng.normal(size=ws), requires_grad=True)
    b = Value(rng.normal(size=ws[0]), requires_grad=True)
    out_w = rng.normal(size=ad.conv(x, w, b, stride, padding).shape)
    err = check_gradients(lambda: ad.sum(ad.conv(x, w, b, stride, padding) * out_w), [x, w, b])
    assert err < 1e-7


def test_conv_second_order_via_penalty(rng):
    # penalty of a conv critic w.r.t. its weights needs conv-of-conv-gradients
    w = Value(rng.normal(0, 0.4, size=(2, 1, 3, 3)), requires_grad=True)
    v = Value(rng.normal(0, 0.4, size=(1, 2 * 3 * 3)), requires_grad=True)

    def critic(img):
        h = ad.tanh(ad.conv2d(img, w, stride=2, padding=1))
        return ad.dense(h.reshape(h.shape[0], -1), v).reshape(-1)

    xhat = Value(rng.normal(size=(3, 1, 6, 6)))
    assert check_gradients(lambda: ad.gradient_penalty(critic, xhat), [w, v]) < 1e-6


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        ad.conv2d(np.zeros((1, 2, 5, 5)), np.zeros((1, 3, 3, 3)))
    with pytest.raises(ShapeError):
        ad.conv2d(np.zeros((1, 1, 2, 5)), np.zeros((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        ad.conv3d(np.zeros((1, 1, 5, 5)), np.zeros((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        ad.conv2d(np.zeros((1, 1, 5, 5)), np.zeros((2, 1, 3, 3)), bias=np.zeros(3))


def test_linear_critic_penalty_closed_form(rng):
    lam = 10.0
    w = Value(rng.normal(size=8), requires_grad=True)
    critic = lambda v: ad.matmul(ad.as_value(v), w.reshape(8, 1)).reshape(-1)  # noqa: E731
    xhat = Value(rng.normal(size=(4, 8)), requires_grad=True)
    pen = ad.gradient_penalty(critic, xhat, lam)
    pen.backward()
    norm = np.linalg.norm(w.data)
    assert abs(pen.item() - lam * (norm - 1) ** 2) < 1e-10
    np.testing.assert_allclose(w.grad.data, 2 * lam * (norm - 1) * w.data / norm, rtol=0, atol=1e-10)


def test_unit_norm_linear_critic_has_zero_penalty(rng):
    u = rng.normal(size=5)
    w = Value(u / np.linalg.norm(u), requires_grad=True)
    critic = lambda v: ad.matmul(ad.as_value(v), w.reshape(5, 1)).reshape(-1)  # noqa: E731
    pen = ad.gradient_penalty(critic, Value(rng.normal(size=(3, 5))), 10.0)
    pen.backward()
    assert abs(pen.item()) < 1e-20
    assert np.max(np.abs(w.grad.data)) < 1e-10


def test_penalty_two_layer_smooth_critic(rng):
    w1 = Value(rng.normal(0, 0.5, size=(5, 4)), requires_grad=True)
    b1 = Value(rng.normal(0, 0.1, size=5), requires_grad=True)
    w2 = Value(rng.normal(0, 0.5, size=(1, 5)), requires_grad=True)
    critic = lambda v: ad.dense(ad.tanh(ad.dense(v, w1, b1)), w2).reshape(-1)  # noqa: E731
    xhat = Value(rng.normal(size=(6, 4)))
    assert check_gradients(lambda: ad.gradient_penalty(critic, xhat), [w1, b1, w2]) < 1e-6
