"""Integrated-gradients feature attribution.

attribution_i = (x_i - baseline_i) * mean over interpolation points of dF/dx_i,
which satisfies completeness: sum_i attribution_i ~= F(x) - F(baseline).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, param

MIN_STEPS = 16


def integrated_gradients(
    f: Callable[[list[Tensor]], Tensor],
    inputs: Sequence[np.ndarray],
    baselines: Sequence[np.ndarray],
    steps: int = 64,
) -> list[np.ndarray]:
    """Attributions for a scalar-valued function of one or more arrays.

    `f` receives one Tensor per input array and must return a scalar Tensor.
    Gradients are averaged at interpolation midpoints (alpha = (k + 0.5)/steps).
    """
    if steps < MIN_STEPS:
        raise ValueError(f"steps must be >= {MIN_STEPS}")
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    baselines = [np.asarray(b, dtype=np.float64) for b in baselines]
    if len(inputs) != len(baselines):
        raise ValueError("inputs and baselines must align")
    for x, b in zip(inputs, baselines):
        if x.shape != b.shape:
            raise ValueError(f"shape mismatch: {x.shape} vs {b.shape}")
    grad_sums = [np.zeros_like(x) for x in inputs]
    for k in range(steps):
        alpha = (k + 0.5) / steps
        leafs = [param(b + alpha * (x - b)) for x, b in zip(inputs, baselines)]
        out = f(leafs)
        out.backward()
        for i, leaf in enumerate(leafs):
            if leaf.grad is not None:
                grad_sums[i] += leaf.grad
    return [
        (x - b) * gs / steps
        for x, b, gs in zip(inputs, baselines, grad_sums)
    ]


def evaluate_scalar(f: Callable[[list[Tensor]], Tensor], arrays: Sequence[np.ndarray]) -> float:
    return float(f([Tensor(a) for a in arrays]).data)


def completeness_gap(
    f: Callable[[list[Tensor]], Tensor],
    inputs: Sequence[np.ndarray],
    baselines: Sequence[np.ndarray],
    attributions: Sequence[np.ndarray],
) -> tuple[float, float]:
    """(sum of attributions - (F(x) - F(baseline)), F(x) - F(baseline))."""
    delta = evaluate_scalar(f, inputs) - evaluate_scalar(f, baselines)
    total = float(sum(a.sum() for a in attributions))
    return total - delta, delta
