"""Adam with bias correction, as a pure step function plus a small stateful wrapper."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Value


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
    """One Adam update on name -> array mappings; returns (new_params, new_state).

    Inputs are not modified.
    """
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v)


class Adam:
    """Applies ``adam_step`` to a dict of Values in place, using their ``.grad``."""

    def __init__(self, params: dict[str, Value], lr: float = 1e-4, b1: float = 0.5, b2: float = 0.9, eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        arrays = {n: p.data for n, p in self.params.items()}
        grads = {n: (p.grad.data if p.grad is not None else np.zeros_like(p.data)) for n, p in self.params.items()}
        new, self.state = adam_step(arrays, grads, self.state, self.lr, self.b1, self.b2, self.eps)
        for n, p in self.params.items():
            p.data = new[n]
