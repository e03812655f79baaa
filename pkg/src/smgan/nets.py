"""3D generator and 2.5D critic as parameterised differentiable functions."""
from __future__ import annotations

import hashlib
from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .autodiff import Value, as_value
from .config import CriticSpec, GeneratorSpec

Params = dict[str, Value]


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_generator_params(rng: np.random.Generator, spec: GeneratorSpec) -> Params:
    params: OrderedDict[str, Value] = OrderedDict()
    c_in = spec.in_channels
    for i, k in enumerate(spec.kernel_shapes):
        c_out = 1 if i == spec.n_layers - 1 else spec.filters
        shape = (c_out, c_in) + tuple(k)
        fan_in = c_in * int(np.prod(k))
        params[f"conv{i + 1}.weight"] = Value(he_normal(rng, shape, fan_in), requires_grad=True)
        params[f"conv{i + 1}.bias"] = Value(np.zeros(c_out), requires_grad=True)
        c_in = c_out
    return params


def init_critic_params(rng: np.random.Generator, spec: CriticSpec) -> Params:
    params: OrderedDict[str, Value] = OrderedDict()
    c_in = spec.in_channels
    for i, f in enumerate(spec.filters):
        params[f"conv{i + 1}.weight"] = Value(he_normal(rng, (f, c_in, 3, 3), c_in * 9), requires_grad=True)
        params[f"conv{i + 1}.bias"] = Value(np.zeros(f), requires_grad=True)
        c_in = f
    n_flat = spec.flat_features
    params["fc1.weight"] = Value(he_normal(rng, (spec.dense_units, n_flat), n_flat), requires_grad=True)
    params["fc1.bias"] = Value(np.zeros(spec.dense_units), requires_grad=True)
    params["fc2.weight"] = Value(he_normal(rng, (1, spec.dense_units), spec.dense_units), requires_grad=True)
    params["fc2.bias"] = Value(np.zeros(1), requires_grad=True)
    return params


def init_params(rng: np.random.Generator, spec) -> Params:
    """Fan-in scaled normal weights (std sqrt(2 / fan_in)) and zero biases."""
    if isinstance(spec, GeneratorSpec):
        return init_generator_params(rng, spec)
    if isinstance(spec, CriticSpec):
        return init_critic_params(rng, spec)
    raise TypeError(f"no initializer for {type(spec).__name__}")


def generator_forward(params: Params, y, spec: GeneratorSpec | None = None) -> Value:
    """[B, 1, D, H, W] -> [B, 1, D - 8, H - 16, W - 16] (3D); relu after every layer."""
    spec = spec or GeneratorSpec()
    y = as_value(y)
    if y.ndim != 5 or y.shape[1] != spec.in_channels:
        raise ad.ShapeError(f"generator expects [B, {spec.in_channels}, D, H, W], got {y.shape}")
    d, h, w = y.shape[2:]
    if d <= spec.depth_margin or h <= spec.spatial_margin or w <= spec.spatial_margin:
        raise ad.ShapeError(
            f"input extent (D={d}, H={h}, W={w}) too small; need D > {spec.depth_margin}, "
            f"H, W > {spec.spatial_margin}"
        )
    out = y
    for i in range(spec.n_layers):
        out = ad.conv3d(out, params[f"conv{i + 1}.weight"], params[f"conv{i + 1}.bias"])
        out = ad.relu(out)
    return out


def critic_forward(params: Params, slab, spec: CriticSpec | None = None) -> Value:
    """[B, 3, H, W] -> raw scores [B]; leaky relu after every layer but the last."""
    spec = spec or CriticSpec()
    slab = as_value(slab)
    if slab.ndim != 4 or slab.shape[1] != spec.in_channels:
        raise ad.ShapeError(f"critic expects [B, {spec.in_channels}, H, W], got {slab.shape}")
    h = slab
    for i, s in enumerate(spec.strides):
        h = ad.conv2d(h, params[f"conv{i + 1}.weight"], params[f"conv{i + 1}.bias"], stride=s, padding=spec.padding)
        h = ad.leaky_relu(h, spec.alpha)
    h = h.reshape(h.shape[0], -1)
    h = ad.leaky_relu(ad.dense(h, params["fc1.weight"], params["fc1.bias"]), spec.alpha)
    score = ad.dense(h, params["fc2.weight"], params["fc2.bias"])
    return score.reshape(score.shape[0])


def slab_views(g_out, replicate_single: bool = False) -> Value:
    """Generator output [B, 1, d, H, W] -> critic slabs [B * (d - 2), 3, H, W].

    Slabs are the consecutive 3-slice windows, sample-major. With
    ``replicate_single`` a depth-1 output is repeated into 3 channels.
    """
    g_out = as_value(g_out)
    b, _, d, h, w = g_out.shape
    if d == 1 and replicate_single:
        s = g_out.reshape(b, 1, h, w)
        return ad.concat([s, s, s], axis=1)
    if d < 3:
        raise ad.ShapeError(f"need at least 3 output slices for a slab, got {d}")
    if d == 3:
        return g_out.reshape(b, 3, h, w)
    slabs = [g_out[:, 0, k:k + 3] for k in range(d - 2)]
    return ad.stack(slabs, axis=1).reshape(b * (d - 2), 3, h, w)


class Generator:
    def __init__(self, spec: GeneratorSpec | None = None, rng: np.random.Generator | None = None, params=None):
        self.spec = spec or GeneratorSpec()
        if params is None:
            params = init_generator_params(rng if rng is not None else np.random.default_rng(0), self.spec)
        self.params = params

    def __call__(self, y) -> Value:
        return generator_forward(self.params, y, self.spec)

    def parameters(self) -> list[Value]:
        return list(self.params.values())

    def output_shape(self, in_shape) -> tuple[int, int, int]:
        d, h, w = in_shape
        return d - self.spec.depth_margin, h - self.spec.spatial_margin, w - self.spec.spatial_margin


class Critic:
    def __init__(self, spec: CriticSpec | None = None, rng: np.random.Generator | None = None, params=None):
        self.spec = spec or CriticSpec()
        if params is None:
            params = init_critic_params(rng if rng is not None else np.random.default_rng(0), self.spec)
        self.params = params

    def __call__(self, slab) -> Value:
        return critic_forward(self.params, slab, self.spec)

    def parameters(self) -> list[Value]:
        return list(self.params.values())

    def score_volumes(self, g_out, replicate_single: bool = False) -> Value:
        """Per-sample score [B] of generator-shaped volumes, averaged equally over slabs."""
        g_out = as_value(g_out)
        b = g_out.shape[0]
        scores = self(slab_views(g_out, replicate_single))
        if scores.shape[0] == b:
            return scores
        return ad.mean(scores.reshape(b, -1), axis=1)


def params_checksum(params: Params) -> str:
    h = hashlib.sha256()
    for name, v in params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(v.data).tobytes())
    return h.hexdigest()
