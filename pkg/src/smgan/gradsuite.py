"""Finite-difference self-verification of every differentiable objective.

Each check returns a relative error; ``run_suite`` collects them so the CLI
and the test-suite can share one definition of "the gradients are right".
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Value, check_gradients, relative_error
from .config import CriticSpec, GeneratorSpec, LossConfig
from .losses import critic_loss, generator_objective, l1_loss, l2_loss, ssl_loss, structural_loss
from .nets import Critic, Generator


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)


def _images(rng, shape):
    # values kept inside (0.1, 0.9) so nothing sits at a clamp or kink
    x = rng.uniform(0.1, 0.9, size=shape)
    z = np.clip(x + rng.normal(0.0, 0.1, size=shape), 0.05, 0.95)
    return x, Value(z, requires_grad=True)


def _loss_check(name, fn: Callable[[Value], Value], z: Value, tol, probes) -> CheckResult:
    return CheckResult(name, check_gradients(lambda: fn(z), [z], max_probes=probes), tol)


def _tiny_critic_spec(hw) -> CriticSpec:
    return CriticSpec(filters=(3, 4), strides=(1, 2), dense_units=6, padding=1, input_hw=hw)


def linear_critic_closed_form(rng, n_features: int = 12, lambda_gp: float = 10.0) -> dict[str, float]:
    """Max abs deviations between autodiff and the closed forms for D(x) = w . x."""
    w = Value(rng.normal(size=n_features), requires_grad=True)
    x = rng.normal(size=(5, n_features))
    z = rng.normal(size=(5, n_features))

    def critic(v):
        return ad.matmul(ad.as_value(v), w.reshape(n_features, 1)).reshape(-1)

    norm = float(np.linalg.norm(w.data))
    xhat = Value(rng.normal(size=(5, n_features)), requires_grad=True)
    pen = ad.gradient_penalty(critic, xhat, lambda_gp)
    (g_x,) = ad.grad(ad.sum(critic(xhat)), [xhat])
    pen.backward()
    expected_grad = 2.0 * lambda_gp * (norm - 1.0) * w.data / norm
    out = {
        "input_gradient": float(np.max(np.abs(g_x.data - w.data[None, :]))),
        "penalty": abs(pen.item() - lambda_gp * (norm - 1.0) ** 2),
        "parameter_gradient": float(np.max(np.abs(w.grad.data - expected_grad))),
    }
    loss = critic_loss(critic, x, z, lambda_gp, np.random.default_rng(0))
    expected = -np.mean(x @ w.data) + np.mean(z @ w.data) + lambda_gp * (norm - 1.0) ** 2
    out["critic_loss"] = abs(loss.item() - expected)

    # unit-norm weights: the penalty and its gradient vanish
    w.data = w.data / norm
    w.grad = None
    pen = ad.gradient_penalty(critic, xhat, lambda_gp)
    pen.backward()
    out["unit_norm_penalty"] = abs(pen.item())
    out["unit_norm_gradient"] = float(np.max(np.abs(w.grad.data)))
    return out


def run_suite(tol: float = 1e-4, seed: int = 0, probes: int = 48) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []

    x1, z1 = _images(rng, (2, 1, 1, 16, 16))
    x3, z3 = _images(rng, (2, 1, 3, 16, 16))
    sl_cfg = LossConfig(scales=1)
    ms_cfg = LossConfig(scales=2, window_size=7, window_sigma=1.0)
    results += [
        _loss_check("l1", lambda z: l1_loss(z, x1), z1, tol, probes),
        _loss_check("l2", lambda z: l2_loss(z, x1), z1, tol, probes),
        _loss_check("sl_1slice", lambda z: structural_loss(x1, z, sl_cfg), z1, tol, probes),
        _loss_check("sl_3slice", lambda z: structural_loss(x3, z, sl_cfg), z3, tol, probes),
        _loss_check("msl_2scale", lambda z: structural_loss(x3, z, ms_cfg), z3, tol, probes),
        _loss_check("ssl", lambda z: ssl_loss(x3, z, ms_cfg), z3, tol, probes),
        _loss_check(
            "ssim_volume", lambda z: structural_loss(x3, z, LossConfig(scales=1, ssim_mode="volume")), z3, tol, probes
        ),
    ]

    critic = Critic(_tiny_critic_spec((16, 16)), rng)
    obj_cfg = LossConfig(scales=2, window_size=7, window_sigma=1.0, beta=0.5)
    results.append(
        _loss_check(
            "generator_objective",
            lambda z: generator_objective(x3, z, critic.score_volumes, obj_cfg),
            z3,
            tol,
            probes,
        )
    )

    # gradient penalty w.r.t. critic parameters: smooth two-layer critic ...
    w1 = Value(rng.normal(0, 0.5, size=(6, 10)), requires_grad=True)
    w2 = Value(rng.normal(0, 0.5, size=(1, 6)), requires_grad=True)

    def smooth(v):
        return ad.dense(ad.tanh(ad.dense(v, w1)), w2).reshape(-1)

    xhat = Value(rng.normal(size=(4, 10)))
    results.append(
        CheckResult(
            "penalty_params_tanh",
            check_gradients(lambda: ad.gradient_penalty(smooth, xhat), [w1, w2], max_probes=probes),
            tol,
        )
    )
    # ... and the convolutional critic itself (kinks have measure zero)
    slab = Value(rng.uniform(0, 1, size=(2, 3, 16, 16)))
    results.append(
        CheckResult(
            "penalty_params_critic",
            check_gradients(lambda: ad.gradient_penalty(critic, slab), critic.parameters(), max_probes=probes // 4 or 1),
            tol,
        )
    )

    # generator parameters through the full supervised objective
    gen = Generator(GeneratorSpec(filters=2, n_layers=2), rng)
    y = rng.uniform(0.1, 0.9, size=(1, 1, 3, 12, 12))
    target = rng.uniform(0.1, 0.9, size=(1, 1, 1, 8, 8))
    for p in gen.parameters():
        p.data = np.abs(p.data) + 0.05  # keep relu units active
    results.append(
        CheckResult(
            "generator_params",
            check_gradients(lambda: l2_loss(gen(y), target), gen.parameters(), max_probes=probes),
            tol,
        )
    )

    for key, err in linear_critic_closed_form(rng).items():
        results.append(CheckResult(f"linear_critic_{key}", err, 1e-10))
    return results


def format_results(results: list[CheckResult], elapsed: float | None = None) -> str:
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name:<32s} err={r.error:.3e}  tol={r.tol:.0e}" for r in results]
    if elapsed is not None:
        lines.append(f"{sum(r.passed for r in results)}/{len(results)} checks passed in {elapsed:.1f}s")
    return "\n".join(lines)


def timed_suite(tol: float = 1e-4, seed: int = 0) -> tuple[list[CheckResult], float]:
    t0 = time.perf_counter()
    res = run_suite(tol, seed)
    return res, time.perf_counter() - t0


__all__ = ["CheckResult", "format_results", "linear_critic_closed_form", "relative_error", "run_suite", "timed_suite"]
