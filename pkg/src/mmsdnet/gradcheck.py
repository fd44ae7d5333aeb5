"""Central finite-difference check of tape gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import GradientTape, NumericError, Tensor, backward, parameter

__all__ = ["finite_diff_check", "numeric_gradient", "model_gradient_check"]


def numeric_gradient(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Per-coordinate central differences ``(f(p+h) - f(p-h)) / 2h``.

    ``f`` is evaluated with no tape active, on constant tensors.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(p):
        val = f({k: Tensor(v) for k, v in p.items()}).item()
        if not np.isfinite(val):
            raise NumericError("objective evaluated to a non-finite value")
        return val

    out = {}
    for name, arr in base.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = evaluate(base)
            flat[i] = orig - h
            fm = evaluate(base)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        out[name] = g
    return out


def finite_diff_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    The relative error of each coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    with GradientTape() as tape:
        leaves = {k: parameter(v, k) for k, v in params.items()}
        loss = f(leaves)
    analytic = backward(tape, loss)
    numeric = numeric_gradient(f, params, h)
    worst = 0.0
    for name, num in numeric.items():
        ana = analytic.get(name, np.zeros_like(num))
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-8)
        worst = max(worst, float((np.abs(ana - num) / denom).max(initial=0.0)))
    return worst


def model_gradient_check(config=None, seed: int = 0, h: float = 1e-5) -> float:
    """Finite-difference check of the full model's cross-entropy loss.

    Uses two random samples (one per class) so both logit columns matter.
    """
    from . import tensor as T
    from .model import TOY_CONFIG, forward, init_params, random_sample

    config = config or TOY_CONFIG
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    samples = [random_sample(config, rng, label=0), random_sample(config, rng, label=1)]

    def loss(p):
        return T.cross_entropy(T.stack([forward(s, p, config) for s in samples]), [s.label for s in samples])

    return finite_diff_check(loss, params, h)
