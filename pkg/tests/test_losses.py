"""Loss suite: SSIM against a scalar-loop oracle, MS-SSIM pipeline, SSL and WGAN-GP terms."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smgan import autodiff as ad
from smgan.autodiff import ShapeError, Value, check_gradients
from smgan.config import LossConfig
from smgan.losses import (
    critic_loss,
    critic_terms,
    downsample2,
    generator_objective,
    l1_loss,
    l2_loss,
    ms_ssim,
    ssim_map,
    ssl_loss,
    structural_loss,
    supervised_loss,
    window_1d,
)

C1, C2 = 0.01**2, 0.03**2


def gauss_window(size=11, sigma=1.5):
    g = [[math.exp(-((i - size // 2) ** 2 + (j - size // 2) ** 2) / (2 * sigma * sigma)) for j in range(size)] for i in range(size)]
    total = sum(map(sum, g))
    return [[v / total for v in row] for row in g]


def loop_ssim(x, z, size=11, sigma=1.5):
    """Mean SSIM over all valid window positions, written out as scalar sums."""
    w = gauss_window(size, sigma)
    H, W = len(x), len(x[0])
    vals = []
    for r in range(H - size + 1):
        for c in range(W - size + 1):
            mx = mz = sxx = szz = sxz = 0.0
            for i in range(size):
                for j in range(size):
                    a, b, k = x[r + i][c + j], z[r + i][c + j], w[i][j]
                    mx += k * a
                    mz += k * b
                    sxx += k * a * a
                    szz += k * b * b
                    sxz += k * a * b
            vx, vz, cov = sxx - mx * mx, szz - mz * mz, sxz - mx * mz
            vals.append(((2 * mx * mz + C1) * (2 * cov + C2)) / ((mx * mx + mz * mz + C1) * (vx + vz + C2)))
    return sum(vals) / len(vals)


def pool2(a):
    h, w = a.shape[0] // 2, a.shape[1] // 2
    return np.array([[a[2 * i:2 * i + 2, 2 * j:2 * j + 2].mean() for j in range(w)] for i in range(h)])


def _pair(rng, shape, noise=0.1):
    x = rng.uniform(0.1, 0.9, size=shape)
    z = np.clip(x + rng.normal(0, noise, size=shape), 0.0, 1.0)
    return x, z


def test_gaussian_window_normalised_and_symmetric():
    w = window_1d("gaussian", 11, 1.5)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(w, w[::-1], rtol=0, atol=1e-18)
    np.testing.assert_allclose(np.outer(w, w), gauss_window(), rtol=1e-12)


def test_ssim_single_window_matches_loop_oracle(rng):
    x, z = _pair(rng, (11, 11))
    s, _, _ = ssim_map(x, z)
    assert s.item() == pytest.approx(loop_ssim(x.tolist(), z.tolist()), abs=1e-12)


def test_ssim_sliding_windows_match_loop_oracle(rng):
    x, z = _pair(rng, (14, 13))
    s, _, _ = ssim_map(x, z)
    assert s.item() == pytest.approx(loop_ssim(x.tolist(), z.tolist()), abs=1e-12)


def test_ms_ssim_two_scales_matches_pipeline_oracle(rng):
    x, z = _pair(rng, (22, 23))
    expected = loop_ssim(x.tolist(), z.tolist()) * loop_ssim(pool2(x).tolist(), pool2(z).tolist())
    got = ms_ssim(x, z, LossConfig(scales=2)).item()
    assert got == pytest.approx(expected, abs=1e-12)


def test_ms_ssim_one_scale_is_mean_slice_ssim(rng):
    x, z = _pair(rng, (2, 1, 3, 16, 16))
    per_slice = [ssim_map(x[b, 0, d], z[b, 0, d])[0].item() for b in range(2) for d in range(3)]
    assert ms_ssim(x, z, LossConfig(scales=1)).item() == pytest.approx(np.mean(per_slice), abs=1e-12)


def test_ssim_identity_and_symmetry(rng):
    x, z = _pair(rng, (16, 16))
    assert ssim_map(x, x)[0].item() == pytest.approx(1.0, abs=1e-12)
    assert ssim_map(x, z)[0].item() == ssim_map(z, x)[0].item()
    assert structural_loss(x, x, LossConfig(scales=1)).item() == pytest.approx(0.0, abs=1e-12)


def test_ssim_of_constant_images_uses_stabilisers():
    x = np.full((11, 11), 0.2)
    z = np.full((11, 11), 0.6)
    expected = (2 * 0.2 * 0.6 + C1) / (0.2**2 + 0.6**2 + C1)
    assert ssim_map(x, z)[0].item() == pytest.approx(expected, abs=1e-12)


def test_ms_ssim_rejects_too_many_scales(rng):
    x, z = _pair(rng, (1, 1, 3, 40, 40))
    with pytest.raises(ShapeError):
        ms_ssim(x, z, LossConfig(scales=3))


def test_downsample2_is_block_mean(rng):
    a = rng.normal(size=(2, 6, 7))
    np.testing.assert_allclose(downsample2(Value(a)).data[1], pool2(a[1]), atol=1e-15)


def test_l1_l2_values():
    z, x = np.array([0.0, 1.0, 3.0]), np.array([1.0, 1.0, 1.0])
    assert l1_loss(z, x).item() == pytest.approx(1.0)
    assert l2_loss(z, x).item() == pytest.approx(5.0 / 3.0)
    with pytest.raises(ShapeError):
        l1_loss(np.zeros(3), np.zeros(4))


@settings(max_examples=30, deadline=None)
@given(
    tau=st.floats(0.0, 1.0),
    seed=st.integers(0, 2**31 - 1),
)
def test_ssl_is_convex_combination(tau, seed):
    rng = np.random.default_rng(seed)
    x, z = _pair(rng, (1, 1, 1, 12, 12), noise=0.2)
    cfg = LossConfig(tau=tau, scales=1)
    sl = structural_loss(x, z, cfg).item()
    l1 = l1_loss(z, x).item()
    ssl = ssl_loss(x, z, cfg).item()
    assert min(sl, l1) - 1e-12 <= ssl <= max(sl, l1) + 1e-12
    assert ssl == pytest.approx(tau * sl + (1 - tau) * l1, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_l2_bounded_by_l1_on_unit_range(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, size=20)
    z = rng.uniform(0, 1, size=20)
    assert l2_loss(z, x).item() <= l1_loss(z, x).item() + 1e-15


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_ssim_bounded_and_symmetric(seed):
    rng = np.random.default_rng(seed)
    x, z = rng.uniform(0, 1, size=(12, 12)), rng.uniform(0, 1, size=(12, 12))
    s = ssim_map(x, z)[0].item()
    assert -1.0 <= s <= 1.0
    assert s == ssim_map(z, x)[0].item()


def test_ssl_endpoints(rng):
    x, z = _pair(rng, (1, 1, 1, 16, 16))
    assert ssl_loss(x, z, LossConfig(tau=0.0, scales=1)).item() == l1_loss(z, x).item()
    assert ssl_loss(x, z, LossConfig(tau=1.0, scales=1)).item() == structural_loss(x, z, LossConfig(scales=1)).item()


@pytest.mark.parametrize("variant", ["L1", "L2", "SL", "MSL", "SSL", "WGAN-L2", "SMGAN"])
def test_loss_gradients_wrt_output(variant, rng):
    x, z0 = _pair(rng, (1, 1, 3, 16, 16))
    z = Value(z0, requires_grad=True)
    cfg = LossConfig(variant=variant, scales=2, window_size=7, window_sigma=1.0)
    assert check_gradients(lambda: supervised_loss(x, z, cfg), [z], max_probes=40) < 1e-4


def _linear(w):
    return lambda v: ad.matmul(ad.as_value(v).reshape(ad.as_value(v).shape[0], -1), w.reshape(-1, 1)).reshape(-1)


def test_critic_loss_linear_closed_form(rng):
    lam = 10.0
    w = Value(rng.normal(size=12), requires_grad=True)
    x, z = rng.normal(size=(6, 12)), rng.normal(size=(6, 12))
    terms = critic_terms(_linear(w), x, z, lam, np.random.default_rng(3))
    norm = np.linalg.norm(w.data)
    assert terms.wasserstein.item() == pytest.approx(np.mean(x @ w.data) - np.mean(z @ w.data), abs=1e-12)
    expected = -np.mean(x @ w.data) + np.mean(z @ w.data) + lam * (norm - 1) ** 2
    assert abs(terms.loss.item() - expected) < 1e-10
    assert terms.penalty.item() >= 0


def test_critic_loss_without_penalty(rng):
    w = Value(rng.normal(size=4), requires_grad=True)
    x, z = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    loss = critic_loss(_linear(w), x, z, 0.0, np.random.default_rng(0))
    assert loss.item() == pytest.approx(-np.mean(x @ w.data) + np.mean(z @ w.data), abs=1e-12)


def test_generator_objective_adds_adversarial_term(rng):
    x, z = _pair(rng, (2, 1, 1, 16, 16))
    w = Value(rng.normal(size=256))
    critic = _linear(w)
    cfg = LossConfig(variant="SMGAN", scales=1, beta=0.25)
    sup = ssl_loss(x, z, cfg).item()
    adv = -np.mean(z.reshape(2, -1) @ w.data)
    assert generator_objective(x, z, critic, cfg).item() == pytest.approx(sup + 0.25 * adv, abs=1e-12)
    cfg0 = LossConfig(variant="SMGAN", scales=1, beta=0.0)
    assert generator_objective(x, z, critic, cfg0).item() == pytest.approx(sup, abs=1e-15)


def test_generator_objective_gradient_through_critic(rng):
    x, z0 = _pair(rng, (1, 1, 1, 16, 16))
    z = Value(z0, requires_grad=True)
    w1 = Value(rng.normal(0, 0.1, size=(4, 256)))
    critic = lambda v: ad.sum(ad.tanh(ad.dense(v.reshape(v.shape[0], -1), w1)), axis=1)  # noqa: E731
    cfg = LossConfig(variant="SMGAN", scales=1, beta=0.5)
    assert check_gradients(lambda: generator_objective(x, z, critic, cfg), [z], max_probes=40) < 1e-4


def test_default_loss_weights():
    cfg = LossConfig()
    assert (cfg.tau, cfg.beta, cfg.lambda_gp) == (0.89, 1e-3, 10.0)
    assert (cfg.c1, cfg.c2) == (pytest.approx(1e-4), pytest.approx(9e-4))
    assert (cfg.window_size, cfg.window_sigma, cfg.scales) == (11, 1.5, 3)
