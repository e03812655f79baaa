"""Reverse-mode differentiation graph over float64 numpy arrays.

Every backward rule is written in terms of differentiable operations, so a
gradient computed with ``create_graph=True`` is itself a node in a new graph
and can be differentiated again (needed for the gradient penalty).
"""
from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

DTYPE = np.float64


class GraphError(RuntimeError):
    """Raised for misuse of the differentiation graph."""


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf crosses a graph boundary."""


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


_grad_enabled = True


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def set_grad_enabled(mode: bool):
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = bool(mode)
    try:
        yield
    finally:
        _grad_enabled = previous


def no_grad():
    return set_grad_enabled(False)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


class Value:
    """A node of the differentiation graph holding a dense float64 array."""

    __array_priority__ = 200

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        _check_finite(arr, name or "leaf value")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad: Value | None = None
        self.creator: Function | None = None
        self.generation = 0
        self._backward_done = False

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Value":
        # op results skip the finiteness scan; roots are checked in backward()
        v = cls.__new__(cls)
        v.data = arr if arr.dtype == DTYPE else arr.astype(DTYPE)
        v.requires_grad = False
        v.name = None
        v.grad = None
        v.creator = None
        v.generation = 0
        v._backward_done = False
        return v

    # -- array protocol ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        body = np.array2string(self.data, precision=6, threshold=8)
        return f"Value({body}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Value":
        return Value._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph --------------------------------------------------------------
    def backward(self, create_graph: bool = False) -> None:
        """Accumulate d(self)/d(node) into ``.grad`` of every requires-grad ancestor."""
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar root, got shape {self.shape}")
        if self._backward_done:
            raise GraphError("backward() already ran on this graph; rebuild it or reset gradients first")
        _check_finite(self.data, "loss")
        seed = Value._wrap(np.ones_like(self.data))
        nodes, grads = _backprop(self, seed, create_graph)
        for node in nodes:
            g = grads.get(id(node))
            if g is None or not node.requires_grad:
                continue
            node.grad = g if node.grad is None else node.grad + g
        self._backward_done = True

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from .ops import div
        return div(self, other)

    def __rtruediv__(self, other):
        from .ops import div
        return div(other, self)

    def __neg__(self):
        from .ops import neg
        return neg(self)

    def __pow__(self, exponent):
        from .ops import power
        return power(self, exponent)

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)

    def __getitem__(self, index):
        from .ops import getitem
        return getitem(self, index)

    def reshape(self, *shape):
        from .ops import reshape
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        from .ops import transpose
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims: bool = False):
        from .ops import sum as _sum
        return _sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from .ops import mean
        return mean(self, axis, keepdims)


def as_value(x) -> Value:
    if isinstance(x, Value):
        return x
    return Value._wrap(np.asarray(x, dtype=DTYPE))


class Function:
    """One primitive. ``forward`` works on arrays, ``backward`` on Values."""

    inputs: tuple[Value, ...]

    def __call__(self, *inputs) -> Value:
        xs = tuple(as_value(x) for x in inputs)
        y = self.forward(*(x.data for x in xs))
        out = Value._wrap(np.asarray(y, dtype=DTYPE))
        if _grad_enabled and any(x.requires_grad for x in xs):
            self.inputs = xs
            self.generation = max(x.generation for x in xs)
            out.creator = self
            out.requires_grad = True
            out.generation = self.generation + 1
        return out

    def forward(self, *xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gy: Value) -> Sequence[Value | None]:
        raise NotImplementedError


def _topological_order(root: Value) -> list[Value]:
    """Nodes reachable from ``root`` ordered so every node follows its inputs."""
    order: list[Value] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Value, int]] = [(root, 0)]
    while stack:
        node, idx = stack.pop()
        key = id(node)
        if idx == 0:
            if state.get(key) == 2:
                continue
            state[key] = 1
        parents = node.creator.inputs if node.creator is not None else ()
        if idx < len(parents):
            stack.append((node, idx + 1))
            parent = parents[idx]
            pstate = state.get(id(parent))
            if pstate == 1:
                raise GraphError("cycle detected in differentiation graph")
            if pstate is None and parent.requires_grad:
                stack.append((parent, 0))
        else:
            state[key] = 2
            order.append(node)
    return order


def _backprop(root: Value, seed: Value, create_graph: bool):
    nodes = _topological_order(root)
    grads: dict[int, Value] = {id(root): seed}
    with set_grad_enabled(create_graph):
        for node in reversed(nodes):
            gy = grads.get(id(node))
            f = node.creator
            if gy is None or f is None:
                continue
            gxs = f.backward(gy)
            for x, gx in zip(f.inputs, gxs):
                if gx is None or not x.requires_grad:
                    continue
                if gx.shape != x.shape:
                    raise GraphError(
                        f"{type(f).__name__}.backward produced gradient {gx.shape} for input {x.shape}"
                    )
                prev = grads.get(id(x))
                grads[id(x)] = gx if prev is None else prev + gx
    return nodes, grads


def grad(output: Value, inputs: Iterable[Value], create_graph: bool = False) -> list[Value]:
    """Gradients of a scalar ``output`` w.r.t. ``inputs`` without touching ``.grad``.

    With ``create_graph=True`` the returned gradients are graph nodes that can
    be differentiated again.
    """
    if output.data.size != 1:
        raise GraphError(f"grad() needs a scalar output, got shape {output.shape}")
    _check_finite(output.data, "output")
    inputs = list(inputs)
    seed = Value._wrap(np.ones_like(output.data))
    _, grads = _backprop(output, seed, create_graph)
    result = []
    for x in inputs:
        g = grads.get(id(x))
        result.append(g if g is not None else Value._wrap(np.zeros_like(x.data)))
    return result
