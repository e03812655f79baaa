"""Differentiable losses: L1, L2, SSIM / MS-SSIM structural loss, SSL, WGAN-GP terms."""
from __future__ import annotations

from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Value, as_value
from .config import LossConfig


def _check_same_shape(z: Value, x: Value) -> None:
    if z.shape != x.shape:
        raise ad.ShapeError(f"shape mismatch: {z.shape} vs {x.shape}")


def l2_loss(z, x) -> Value:
    """Mean squared difference over every voxel."""
    z, x = as_value(z), as_value(x)
    _check_same_shape(z, x)
    return ad.mean(ad.square(z - x))


def l1_loss(z, x) -> Value:
    """Mean absolute difference over every voxel."""
    z, x = as_value(z), as_value(x)
    _check_same_shape(z, x)
    return ad.mean(ad.abs(z - x))


# -- SSIM ----------------------------------------------------------------------


@lru_cache(maxsize=None)
def window_1d(kind: str, size: int, sigma: float) -> np.ndarray:
    if kind == "uniform":
        return np.full(size, 1.0 / size)
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def window_2d(kind: str, size: int, sigma: float) -> np.ndarray:
    w = window_1d(kind, size, sigma)
    return np.outer(w, w)


def _filter(maps: Value, config: LossConfig) -> Value:
    """Valid separable window filtering of [N, H, W] (slice) or [N, D, H, W] (volume) maps."""
    w = window_1d(config.window_kind, config.window_size, config.window_sigma)
    s = config.window_size
    if config.ssim_mode == "slice":
        n, h, wd = maps.shape
        v = maps.reshape(n, 1, h, wd)
        v = ad.conv2d(v, w.reshape(1, 1, s, 1))
        v = ad.conv2d(v, w.reshape(1, 1, 1, s))
        return v.reshape(n, v.shape[2], v.shape[3])
    n, d, h, wd = maps.shape
    sd = min(config.window_depth, d)
    wz = window_1d(config.window_kind, sd, config.window_sigma)
    v = maps.reshape(n, 1, d, h, wd)
    v = ad.conv3d(v, wz.reshape(1, 1, sd, 1, 1))
    v = ad.conv3d(v, w.reshape(1, 1, 1, s, 1))
    v = ad.conv3d(v, w.reshape(1, 1, 1, 1, s))
    return v.reshape(n, *v.shape[2:])


class SSIMTerms(NamedTuple):
    ssim: Value  # per-image mean of the SSIM map
    l: Value  # per-image mean luminance term
    cs: Value  # per-image mean contrast-structure term


def _ssim_per_image(x: Value, z: Value, config: LossConfig) -> SSIMTerms:
    """SSIM statistics for a stack of images [N, H, W] or volumes [N, D, H, W]."""
    spatial = x.shape[1:]
    if any(n < config.window_size for n in spatial[-2:]):
        raise ad.ShapeError(f"SSIM window {config.window_size} larger than image {spatial[-2:]}")
    n = x.shape[0]
    moments = _filter(ad.concat([x, z, x * x, z * z, x * z], axis=0), config)
    mu_x, mu_z, e_xx, e_zz, e_xz = (moments[i * n:(i + 1) * n] for i in range(5))
    mu_xz = mu_x * mu_z
    mu_xx = mu_x * mu_x
    mu_zz = mu_z * mu_z
    l_map = (2.0 * mu_xz + config.c1) / (mu_xx + mu_zz + config.c1)
    cs_map = (2.0 * (e_xz - mu_xz) + config.c2) / ((e_xx - mu_xx) + (e_zz - mu_zz) + config.c2)
    axes = tuple(range(1, l_map.ndim))
    return SSIMTerms(ad.mean(l_map * cs_map, axis=axes), ad.mean(l_map, axis=axes), ad.mean(cs_map, axis=axes))


def _as_images(v: Value, mode: str) -> Value:
    # slice mode: every trailing [H, W] plane is one image; volume mode: trailing [D, H, W]
    if mode == "slice":
        return v.reshape(-1, *v.shape[-2:]) if v.ndim != 3 else v
    if v.ndim < 3:
        raise ad.ShapeError("volume SSIM needs [..., D, H, W] inputs")
    return v.reshape(-1, *v.shape[-3:]) if v.ndim != 4 else v


def ssim_map(x, z, c1: float = 1e-4, c2: float = 9e-4, window: dict | None = None) -> tuple[Value, Value, Value]:
    """Mean SSIM, mean luminance term and mean contrast-structure term over 2D images.

    ``x`` and ``z`` are [H, W] or stacks [..., H, W]; the means run over every
    window position of every image.
    """
    window = window or {}
    config = LossConfig(
        c1=c1,
        c2=c2,
        window_kind=window.get("kind", "gaussian"),
        window_size=window.get("size", 11),
        window_sigma=window.get("sigma", 1.5),
        scales=1,
    )
    x, z = as_value(x), as_value(z)
    _check_same_shape(z, x)
    terms = _ssim_per_image(_as_images(x, "slice"), _as_images(z, "slice"), config)
    return ad.mean(terms.ssim), ad.mean(terms.l), ad.mean(terms.cs)


def downsample2(v: Value) -> Value:
    """2x2 average pooling over the last two axes (odd trailing rows/cols dropped)."""
    h, w = v.shape[-2] // 2, v.shape[-1] // 2
    lead = v.shape[:-2]
    v = v[(Ellipsis, slice(0, 2 * h), slice(0, 2 * w))]
    v = v.reshape(*lead, h, 2, w, 2)
    nl = len(lead)
    return ad.mean(v, axis=(nl + 1, nl + 3))


def ms_ssim(x, z, config: LossConfig | None = None, scales: int | None = None) -> Value:
    """Product over scales of the mean SSIM per image, averaged over images.

    In slice mode each [H, W] plane of a [..., D, H, W] input is one image.
    """
    config = config or LossConfig()
    m = config.scales if scales is None else scales
    x, z = as_value(x), as_value(z)
    _check_same_shape(z, x)
    xs, zs = _as_images(x, config.ssim_mode), _as_images(z, config.ssim_mode)
    coarsest = min(xs.shape[-2:]) // 2 ** (m - 1)
    if coarsest < config.window_size:
        raise ad.ShapeError(
            f"{m} scales shrink {xs.shape[-2:]} to {coarsest} px, below the {config.window_size} px window"
        )
    product = None
    for j in range(m):
        if j:
            xs, zs = downsample2(xs), downsample2(zs)
        s = _ssim_per_image(xs, zs, config).ssim
        product = s if product is None else product * s
    return ad.mean(product)


def structural_loss(x, z, config: LossConfig | None = None, scales: int | None = None) -> Value:
    """1 - MS-SSIM."""
    return 1.0 - ms_ssim(x, z, config, scales)


def ssl_loss(x, z, config: LossConfig | None = None) -> Value:
    """tau * structural loss + (1 - tau) * L1."""
    config = config or LossConfig()
    tau = config.tau
    if tau == 0.0:
        return l1_loss(z, x)
    if tau == 1.0:
        return structural_loss(x, z, config)
    return tau * structural_loss(x, z, config) + (1.0 - tau) * l1_loss(z, x)


# -- adversarial terms -------------------------------------------------------------


class CriticTerms(NamedTuple):
    loss: Value
    wasserstein: Value  # mean D(x) - mean D(z)
    penalty: Value  # lambda * mean((||grad D(xhat)|| - 1)^2)


def critic_terms(critic: Callable[[Value], Value], x_batch, z_batch, lambda_gp: float, rng) -> CriticTerms:
    """WGAN-GP critic objective and its parts.

    ``critic`` maps a batch to per-sample scores [B]. Interpolates are drawn
    per sample, u ~ U[0, 1], along the straight line between x and z.
    """
    x, z = as_value(x_batch).detach(), as_value(z_batch).detach()
    _check_same_shape(z, x)
    u = rng.uniform(0.0, 1.0, size=x.shape[0]).reshape((-1,) + (1,) * (x.ndim - 1))
    xhat = Value(u * x.data + (1.0 - u) * z.data, requires_grad=True)
    d_real = ad.mean(critic(x))
    d_fake = ad.mean(critic(z))
    wasserstein = d_real - d_fake
    if lambda_gp > 0:
        penalty = ad.gradient_penalty(critic, xhat, lambda_gp)
    else:
        penalty = Value(0.0)
    return CriticTerms(penalty - wasserstein, wasserstein, penalty)


def critic_loss(critic, x_batch, z_batch, lambda_gp: float, rng) -> Value:
    """-E[D(x)] + E[D(z)] + lambda * E[(||grad D(xhat)||_2 - 1)^2]."""
    return critic_terms(critic, x_batch, z_batch, lambda_gp, rng).loss


def supervised_loss(x, z, config: LossConfig) -> Value:
    """The non-adversarial part of the objective selected by ``config.variant``."""
    v = config.variant
    if v == "L1":
        return l1_loss(z, x)
    if v in ("L2", "WGAN-L2"):
        return l2_loss(z, x)
    if v == "SL":
        return structural_loss(x, z, config, scales=1)
    if v == "MSL":
        return structural_loss(x, z, config)
    return ssl_loss(x, z, config)


def generator_objective(x, z, critic, config: LossConfig) -> Value:
    """Supervised loss + beta * (-E[D(z)]); the critic is skipped when unused."""
    loss = supervised_loss(x, z, config)
    if config.uses_critic and critic is not None:
        loss = loss + config.beta * -ad.mean(critic(as_value(z)))
    return loss
