"""Elementwise, reduction, shape and linear-algebra primitives."""
from __future__ import annotations

import numpy as np

from .core import DTYPE, Function, ShapeError, Value, as_value


def _sum_to_shape(x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(i + lead for i, n in enumerate(shape) if n == 1 and x.shape[i + lead] != 1)
    y = x.sum(axis=axes, keepdims=True) if axes else x
    if lead:
        y = y.reshape(y.shape[lead:])
    return y


def _unbroadcast(g: Value, shape: tuple[int, ...]) -> Value:
    return g if g.shape == shape else sum_to(g, shape)


# -- shape primitives -------------------------------------------------------


class SumTo(Function):
    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, x):
        self.x_shape = x.shape
        return _sum_to_shape(x, self.shape)

    def backward(self, gy):
        return (broadcast_to(gy, self.x_shape),)


class BroadcastTo(Function):
    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, x):
        self.x_shape = x.shape
        return np.broadcast_to(x, self.shape)

    def backward(self, gy):
        return (sum_to(gy, self.x_shape),)


def sum_to(x, shape) -> Value:
    x = as_value(x)
    if x.shape == tuple(shape):
        return x
    return SumTo(shape)(x)


def broadcast_to(x, shape) -> Value:
    x = as_value(x)
    if x.shape == tuple(shape):
        return x
    return BroadcastTo(shape)(x)


class Reshape(Function):
    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, x):
        self.x_shape = x.shape
        return x.reshape(self.shape)

    def backward(self, gy):
        return (reshape(gy, self.x_shape),)


def reshape(x, shape) -> Value:
    x = as_value(x)
    if x.shape == tuple(shape):
        return x
    return Reshape(shape)(x)


class Transpose(Function):
    def __init__(self, axes=None):
        self.axes = None if axes is None else tuple(axes)

    def forward(self, x):
        return np.transpose(x, self.axes)

    def backward(self, gy):
        if self.axes is None:
            return (transpose(gy),)
        inverse = tuple(np.argsort(self.axes))
        return (transpose(gy, inverse),)


def transpose(x, axes=None) -> Value:
    return Transpose(axes)(x)


class GetItem(Function):
    def __init__(self, index):
        self.index = index

    def forward(self, x):
        self.x_shape = x.shape
        return x[self.index]

    def backward(self, gy):
        return (ScatterInto(self.index, self.x_shape)(gy),)


class ScatterInto(Function):
    """Place ``x`` at ``index`` inside a zero array of ``shape`` (adjoint of GetItem)."""

    def __init__(self, index, shape):
        self.index = index
        self.shape = tuple(shape)

    def forward(self, x):
        out = np.zeros(self.shape, dtype=DTYPE)
        if _is_fancy(self.index):
            np.add.at(out, self.index, x)
        else:
            out[self.index] = x
        return out

    def backward(self, gy):
        return (getitem(gy, self.index),)


def _is_fancy(index) -> bool:
    if not isinstance(index, tuple):
        index = (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in index)


def getitem(x, index) -> Value:
    return GetItem(index)(x)


def pad(x, widths) -> Value:
    """Zero-pad ``x``; ``widths`` is a sequence of (before, after) per axis."""
    x = as_value(x)
    widths = [tuple(w) for w in widths]
    if all(a == 0 and b == 0 for a, b in widths):
        return x
    shape = tuple(n + a + b for n, (a, b) in zip(x.shape, widths))
    index = tuple(slice(a, a + n) for n, (a, _) in zip(x.shape, widths))
    return ScatterInto(index, shape)(x)


class Concat(Function):
    def __init__(self, axis):
        self.axis = axis

    def forward(self, *xs):
        self.sizes = [x.shape[self.axis] for x in xs]
        return np.concatenate(xs, axis=self.axis)

    def backward(self, gy):
        out, start = [], 0
        for n in self.sizes:
            index = [slice(None)] * gy.ndim
            index[self.axis] = slice(start, start + n)
            out.append(getitem(gy, tuple(index)))
            start += n
        return out


def concat(xs, axis: int = 0) -> Value:
    return Concat(axis)(*xs)


def stack(xs, axis: int = 0) -> Value:
    xs = [as_value(x) for x in xs]
    ax = axis if axis >= 0 else axis + xs[0].ndim + 1
    expanded = [reshape(x, x.shape[:ax] + (1,) + x.shape[ax:]) for x in xs]
    return concat(expanded, ax)


# -- arithmetic ---------------------------------------------------------------


class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, gy):
        a, b = self.inputs
        return _unbroadcast(gy, a.shape), _unbroadcast(gy, b.shape)


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, gy):
        a, b = self.inputs
        return _unbroadcast(gy, a.shape), _unbroadcast(-gy, b.shape)


class Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, gy):
        a, b = self.inputs
        ga = _unbroadcast(gy * b, a.shape) if a.requires_grad else None
        gb = _unbroadcast(gy * a, b.shape) if b.requires_grad else None
        return ga, gb


class Div(Function):
    def forward(self, a, b):
        return a / b

    def backward(self, gy):
        a, b = self.inputs
        ga = _unbroadcast(gy / b, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-gy * a / (b * b), b.shape) if b.requires_grad else None
        return ga, gb


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, gy):
        return (-gy,)


class Pow(Function):
    def __init__(self, c: float):
        self.c = float(c)

    def forward(self, x):
        return x ** self.c

    def backward(self, gy):
        (x,) = self.inputs
        if self.c == 2.0:
            return (gy * x * 2.0,)
        return (gy * self.c * power(x, self.c - 1.0),)


def add(a, b) -> Value:
    return Add()(a, b)


def sub(a, b) -> Value:
    return Sub()(a, b)


def mul(a, b) -> Value:
    return Mul()(a, b)


def div(a, b) -> Value:
    return Div()(a, b)


def neg(x) -> Value:
    return Neg()(x)


def power(x, c) -> Value:
    if isinstance(c, Value):
        raise TypeError("exponent must be a constant")
    return Pow(c)(x)


def square(x) -> Value:
    return Pow(2.0)(x)


class Sqrt(Function):
    def forward(self, x):
        return np.sqrt(x)

    def backward(self, gy):
        (x,) = self.inputs
        return (gy * 0.5 / sqrt(x),)


def sqrt(x) -> Value:
    return Sqrt()(x)


class Exp(Function):
    def forward(self, x):
        return np.exp(x)

    def backward(self, gy):
        (x,) = self.inputs
        return (gy * exp(x),)


def exp(x) -> Value:
    return Exp()(x)


class Log(Function):
    def forward(self, x):
        return np.log(x)

    def backward(self, gy):
        (x,) = self.inputs
        return (gy / x,)


def log(x) -> Value:
    return Log()(x)


class Tanh(Function):
    def forward(self, x):
        return np.tanh(x)

    def backward(self, gy):
        (x,) = self.inputs
        t = tanh(x)
        return (gy * (1.0 - t * t),)


def tanh(x) -> Value:
    return Tanh()(x)


class Abs(Function):
    def forward(self, x):
        return np.abs(x)

    def backward(self, gy):
        (x,) = self.inputs
        return (gy * np.sign(x.data),)


def abs(x) -> Value:  # noqa: A001 - mirrors numpy naming
    return Abs()(x)


class LeakyReLU(Function):
    """max(0, x) - alpha * max(0, -x); the slope at exactly 0 is alpha."""

    def __init__(self, alpha: float):
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        self.alpha = float(alpha)

    def forward(self, x):
        self.slope = np.where(x > 0, 1.0, self.alpha)
        return x * self.slope

    def backward(self, gy):
        return (gy * self.slope,)


def relu(x) -> Value:
    return LeakyReLU(0.0)(x)


def leaky_relu(x, alpha: float = 0.2) -> Value:
    return LeakyReLU(alpha)(x)


# -- reductions -----------------------------------------------------------------


class Sum(Function):
    def __init__(self, axis, keepdims):
        self.axis = axis
        self.keepdims = keepdims

    def forward(self, x):
        if x.size == 0:
            raise ShapeError("reduction over an empty tensor")
        self.x_shape = x.shape
        return np.sum(x, axis=self.axis, keepdims=self.keepdims)

    def backward(self, gy):
        shape = self.x_shape
        if not self.keepdims and self.axis is not None:
            axes = (self.axis,) if isinstance(self.axis, int) else self.axis
            axes = sorted(a % len(shape) for a in axes)
            kept = list(gy.shape)
            for a in axes:
                kept.insert(a, 1)
            gy = reshape(gy, tuple(kept))
        elif not self.keepdims:
            gy = reshape(gy, (1,) * len(shape))
        return (broadcast_to(gy, shape),)


def sum(x, axis=None, keepdims: bool = False) -> Value:  # noqa: A001
    return Sum(axis, keepdims)(x)


def mean(x, axis=None, keepdims: bool = False) -> Value:
    x = as_value(x)
    if x.size == 0:
        raise ShapeError("mean of an empty tensor")
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return sum(x, axis, keepdims) * (1.0 / n)


def l2_norm_per_sample(x, eps: float = 1e-12) -> Value:
    """sqrt(sum of squares + eps) over every non-batch axis -> shape [B]."""
    x = as_value(x)
    if x.size == 0:
        raise ShapeError("norm of an empty tensor")
    flat = reshape(x, (x.shape[0], -1)) if x.ndim != 2 else x
    return sqrt(sum(flat * flat, axis=1) + eps)


# -- linear algebra ---------------------------------------------------------------


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul of {a.shape} and {b.shape}")
        return a @ b

    def backward(self, gy):
        a, b = self.inputs
        ga = matmul(gy, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), gy) if b.requires_grad else None
        return ga, gb


def matmul(a, b) -> Value:
    return MatMul()(a, b)


def dense(x, weight, bias=None) -> Value:
    """Affine map x @ weight.T + bias for x [B, N], weight [M, N], bias [M]."""
    x, weight = as_value(x), as_value(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    y = matmul(x, transpose(weight))
    if bias is not None:
        bias = as_value(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"dense: bias {bias.shape} does not match {weight.shape[0]} outputs")
        y = y + bias
    return y
