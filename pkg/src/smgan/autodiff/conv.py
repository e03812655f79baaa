"""Valid (unpadded) strided convolution in any number of spatial dims.

Three kernels close under differentiation:

* ``conv``        y[b,f,o]       = sum_{c,k} w[f,c,k] x[b,c,o*s+k]
* ``input_grad``  x[b,c,o*s+k]  += sum_f     w[f,c,k] g[b,f,o]
* ``weight_grad`` w[f,c,k]       = sum_{b,o} g[b,f,o] x[b,c,o*s+k]

The backward rule of each one is expressed with the other two, so the
gradient-of-gradient needed by the penalty term is available to any order.
"""
from __future__ import annotations

import numpy as np

from .core import DTYPE, Function, ShapeError, Value, as_value
from .ops import pad, reshape


def _out_extent(size: int, k: int, s: int) -> int:
    return (size - k) // s + 1


def _windows(kshape, stride, out_sp):
    for off in np.ndindex(*kshape):
        yield off, tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(off, stride, out_sp))


def _channels_first(a: np.ndarray) -> np.ndarray:
    # (B, C, *S) -> (C, B, *S) view
    return a.swapaxes(0, 1)


def _conv_forward(x, w, stride):
    B, C = x.shape[:2]
    F, K = w.shape[0], w.shape[2:]
    out_sp = tuple(_out_extent(n, k, s) for n, k, s in zip(x.shape[2:], K, stride))
    n_cols = B * int(np.prod(out_sp))
    xt = _channels_first(x)
    wk = np.ascontiguousarray(np.moveaxis(w, 1, -1))  # (F, *K, C)
    out = np.zeros((F, n_cols), dtype=DTYPE)
    tmp = np.empty_like(out)
    for off, win in _windows(K, stride, out_sp):
        cols = xt[(slice(None), slice(None)) + win].reshape(C, n_cols)
        np.matmul(wk[(slice(None),) + off], cols, out=tmp)
        out += tmp
    return np.ascontiguousarray(out.reshape((F, B) + out_sp).swapaxes(0, 1))


def _conv_input_grad(g, w, stride, in_shape):
    B, F = g.shape[:2]
    C, K = w.shape[1], w.shape[2:]
    out_sp = g.shape[2:]
    n_cols = B * int(np.prod(out_sp))
    gt = np.ascontiguousarray(_channels_first(g)).reshape(F, n_cols)
    wt = np.ascontiguousarray(np.moveaxis(w, 0, -1))  # (C, *K, F)
    xt = np.zeros((C, B) + tuple(in_shape), dtype=DTYPE)
    for off, win in _windows(K, stride, out_sp):
        contrib = wt[(slice(None),) + off] @ gt
        xt[(slice(None), slice(None)) + win] += contrib.reshape((C, B) + out_sp)
    return np.ascontiguousarray(xt.swapaxes(0, 1))


def _conv_weight_grad(x, g, stride, kshape):
    B, C = x.shape[:2]
    F = g.shape[1]
    out_sp = g.shape[2:]
    n_cols = B * int(np.prod(out_sp))
    gt = np.ascontiguousarray(_channels_first(g)).reshape(F, n_cols)
    xt = _channels_first(x)
    wg = np.empty((F,) + tuple(kshape) + (C,), dtype=DTYPE)
    for off, win in _windows(kshape, stride, out_sp):
        cols = xt[(slice(None), slice(None)) + win].reshape(C, n_cols)
        wg[(slice(None),) + off] = gt @ cols.T
    return np.ascontiguousarray(np.moveaxis(wg, -1, 1))


# -- stride-1 fast path ----------------------------------------------------------
# With x flattened to (C, B*prod(S)), every kernel offset is a 1D shift of the
# flat index. Outputs are computed on the full input grid and the valid corner
# is kept; positions past the valid region only ever see zeros.

_CHUNK_ELEMS = 1 << 22


def _flat_layout(x):
    c = x.shape[1]
    return np.ascontiguousarray(x.swapaxes(0, 1)).reshape(c, -1)


def _shifts(spatial, kshape) -> list[int]:
    strides = [int(np.prod(spatial[i + 1:])) for i in range(len(spatial))]
    return [int(np.dot(off, strides)) for off in np.ndindex(*kshape)]


def _embed_full(g, in_shape):
    # (B, F, *out) -> (F, B*prod(in_shape)) with g in the leading corner
    b, f = g.shape[:2]
    full = np.zeros((f, b) + tuple(in_shape), dtype=DTYPE)
    full[(slice(None), slice(None)) + tuple(slice(0, n) for n in g.shape[2:])] = g.swapaxes(0, 1)
    return full.reshape(f, -1)


def _conv_forward_s1(x, w):
    B, C = x.shape[:2]
    F, K = w.shape[0], w.shape[2:]
    S = x.shape[2:]
    out_sp = tuple(n - k + 1 for n, k in zip(S, K))
    xf = _flat_layout(x)
    shifts = _shifts(S, K)
    n_total = xf.shape[1]
    L = n_total - shifts[-1]
    wk = np.ascontiguousarray(np.moveaxis(w, 1, -1)).reshape(F, -1)  # [f, off*C + c]
    out = np.zeros((F, n_total), dtype=DTYPE)
    chunk = max(1, min(L, _CHUNK_ELEMS // (len(shifts) * C)))
    cols = np.empty((len(shifts) * C, chunk), dtype=DTYPE)
    for s0 in range(0, L, chunk):
        n = min(chunk, L - s0)
        for i, d in enumerate(shifts):
            cols[i * C:(i + 1) * C, :n] = xf[:, s0 + d:s0 + d + n]
        np.matmul(wk, cols[:, :n], out=out[:, s0:s0 + n])
    out = out.reshape((F, B) + S)[(slice(None), slice(None)) + tuple(slice(0, n) for n in out_sp)]
    return np.ascontiguousarray(out.swapaxes(0, 1))


def _conv_input_grad_s1(g, w, in_shape):
    B, F = g.shape[:2]
    C, K = w.shape[1], w.shape[2:]
    gf = _embed_full(g, in_shape)
    shifts = _shifts(in_shape, K)
    n_total = gf.shape[1]
    L = n_total - shifts[-1]
    wt = np.ascontiguousarray(np.moveaxis(w, 1, -1)).reshape(F, -1).T  # [off*C + c, f]
    xg = np.zeros((C, n_total), dtype=DTYPE)
    chunk = max(1, min(L, _CHUNK_ELEMS // (len(shifts) * C)))
    buf = np.empty((len(shifts) * C, chunk), dtype=DTYPE)
    for s0 in range(0, L, chunk):
        n = min(chunk, L - s0)
        np.matmul(wt, gf[:, s0:s0 + n], out=buf[:, :n])
        for i, d in enumerate(shifts):
            xg[:, s0 + d:s0 + d + n] += buf[i * C:(i + 1) * C, :n]
    return np.ascontiguousarray(xg.reshape((C, B) + tuple(in_shape)).swapaxes(0, 1))


def _conv_weight_grad_s1(x, g, kshape):
    C = x.shape[1]
    F = g.shape[1]
    S = x.shape[2:]
    xf = _flat_layout(x)
    gf = _embed_full(g, S)
    shifts = _shifts(S, kshape)
    L = xf.shape[1] - shifts[-1]
    g_valid = gf[:, :L]
    wg = np.empty((F, len(shifts), C), dtype=DTYPE)
    for i, d in enumerate(shifts):
        wg[:, i] = g_valid @ xf[:, d:d + L].T
    return np.ascontiguousarray(np.moveaxis(wg.reshape((F,) + tuple(kshape) + (C,)), -1, 1))


class Conv(Function):
    def __init__(self, stride):
        self.stride = tuple(stride)

    def forward(self, x, w):
        if all(st == 1 for st in self.stride):
            return _conv_forward_s1(x, w)
        return _conv_forward(x, w, self.stride)

    def backward(self, gy):
        x, w = self.inputs
        gx = ConvInputGrad(self.stride, x.shape[2:])(gy, w) if x.requires_grad else None
        gw = ConvWeightGrad(self.stride, w.shape[2:])(x, gy) if w.requires_grad else None
        return gx, gw


class ConvInputGrad(Function):
    """Transposed convolution: maps output-space gradients back to input space."""

    def __init__(self, stride, in_shape):
        self.stride = tuple(stride)
        self.in_shape = tuple(in_shape)

    def forward(self, g, w):
        if all(st == 1 for st in self.stride):
            return _conv_input_grad_s1(g, w, self.in_shape)
        return _conv_input_grad(g, w, self.stride, self.in_shape)

    def backward(self, gx):
        g, w = self.inputs
        gg = Conv(self.stride)(gx, w) if g.requires_grad else None
        gw = ConvWeightGrad(self.stride, w.shape[2:])(gx, g) if w.requires_grad else None
        return gg, gw


class ConvWeightGrad(Function):
    def __init__(self, stride, kshape):
        self.stride = tuple(stride)
        self.kshape = tuple(kshape)

    def forward(self, x, g):
        if all(st == 1 for st in self.stride):
            return _conv_weight_grad_s1(x, g, self.kshape)
        return _conv_weight_grad(x, g, self.stride, self.kshape)

    def backward(self, gw):
        x, g = self.inputs
        gx = ConvInputGrad(self.stride, x.shape[2:])(g, gw) if x.requires_grad else None
        gg = Conv(self.stride)(x, gw) if g.requires_grad else None
        return gx, gg


def _as_tuple(v, n: int) -> tuple[int, ...]:
    if isinstance(v, int):
        return (v,) * n
    v = tuple(int(i) for i in v)
    if len(v) != n:
        raise ShapeError(f"expected {n} values, got {v}")
    return v


def conv(x, kernel, bias=None, stride=1, padding=0) -> Value:
    """N-d convolution (cross-correlation) with optional zero padding and bias."""
    x, kernel = as_value(x), as_value(kernel)
    nd = kernel.ndim - 2
    if x.ndim != nd + 2:
        raise ShapeError(f"input has {x.ndim} axes, kernel implies {nd + 2}")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"channel mismatch: input C={x.shape[1]}, kernel C={kernel.shape[1]}")
    stride = _as_tuple(stride, nd)
    padding = _as_tuple(padding, nd)
    if any(s < 1 for s in stride):
        raise ShapeError(f"stride must be positive, got {stride}")
    if any(padding):
        x = pad(x, [(0, 0), (0, 0)] + [(p, p) for p in padding])
    bad = [i for i, (n, k) in enumerate(zip(x.shape[2:], kernel.shape[2:])) if k > n]
    if bad:
        raise ShapeError(
            f"kernel {kernel.shape[2:]} exceeds input {x.shape[2:]} on spatial axes {bad}"
        )
    y = Conv(stride)(x, kernel)
    if bias is not None:
        bias = as_value(bias)
        if bias.shape != (kernel.shape[0],):
            raise ShapeError(f"bias {bias.shape} does not match {kernel.shape[0]} filters")
        y = y + reshape(bias, (1, -1) + (1,) * nd)
    return y


def conv2d(x, kernel, bias=None, stride=1, padding=0) -> Value:
    """x [B,C,H,W], kernel [F,C,kh,kw] -> [B,F,H',W']."""
    if as_value(kernel).ndim != 4:
        raise ShapeError("conv2d kernel must be [F,C,kh,kw]")
    return conv(x, kernel, bias, stride, padding)


def conv3d(x, kernel, bias=None, stride=1, padding=0) -> Value:
    """x [B,C,D,H,W], kernel [F,C,kd,kh,kw] -> [B,F,D',H',W']."""
    if as_value(kernel).ndim != 5:
        raise ShapeError("conv3d kernel must be [F,C,kd,kh,kw]")
    return conv(x, kernel, bias, stride, padding)
