"""Central finite-difference oracles for checking analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Value


def numerical_grad(f: Callable[[], Value], x: Value, step: float = 1e-5, indices=None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x.data`` in place.

    ``indices`` restricts the probe to a subset of flat positions; the other
    entries of the result are left at zero.
    """
    flat = x.data.reshape(-1)
    out = np.zeros(flat.shape)
    positions = range(flat.size) if indices is None else indices
    # grad mode stays on: f may itself differentiate (gradient penalty)
    for i in positions:
        orig = flat[i]
        flat[i] = orig + step
        fp = f().item()
        flat[i] = orig - step
        fm = f().item()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * step)
    return out.reshape(x.shape)


def relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    """||a - n|| / max(||a||, ||n||, floor), Euclidean norms over all entries."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(
    f: Callable[[], Value],
    inputs: Sequence[Value],
    step: float = 1e-5,
    max_probes: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between backward() and finite differences over ``inputs``."""
    for x in inputs:
        x.grad = None
    loss = f()
    loss.backward()
    worst = 0.0
    for x in inputs:
        indices = None
        if max_probes is not None and x.size > max_probes:
            rng = rng or np.random.default_rng(0)
            indices = rng.choice(x.size, size=max_probes, replace=False)
        numeric = numerical_grad(f, x, step, indices)
        analytic = x.grad.data if x.grad is not None else np.zeros(x.shape)
        if indices is not None:
            numeric = numeric.reshape(-1)[indices]
            analytic = analytic.reshape(-1)[indices]
        worst = max(worst, relative_error(analytic, numeric))
    return worst
