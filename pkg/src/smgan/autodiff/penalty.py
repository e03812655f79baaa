from __future__ import annotations

from .core import Value, as_value, grad
from .ops import l2_norm_per_sample, mean, square, sum


def gradient_penalty(critic, xhat, lambda_gp: float = 10.0) -> Value:
    """lambda * mean((||grad_xhat critic(xhat)||_2 - 1)^2) as a twice-differentiable node.

    ``critic`` maps a [B, ...] Value to per-sample scores [B]. Calling
    ``backward()`` on the result yields the penalty's parameter gradients.
    """
    xhat = as_value(xhat)
    if not xhat.requires_grad:
        xhat = Value(xhat.data, requires_grad=True)
    scores = critic(xhat)
    (g,) = grad(sum(scores), [xhat], create_graph=True)
    norms = l2_norm_per_sample(g)
    return mean(square(norms - 1.0)) * float(lambda_gp)
