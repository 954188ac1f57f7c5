"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, no_grad


def _evaluate(op, inputs, proj) -> tuple[float, list[np.ndarray]]:
    ops._kink_log = []
    try:
        with no_grad():
            value = float(np.sum(op(*inputs).data * proj))
        return value, ops._kink_log
    finally:
        ops._kink_log = None


def _same_pattern(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def finite_difference_check(
    op: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    n_coords: int = 30,
    seed: int = 0,
    floor: float = 1e-6,
    require_float64: bool = True,
    stats: dict | None = None,
) -> float:
    """Max relative error between backprop grads and central differences.

    The op output is reduced to a scalar with a fixed random projection so
    every output element contributes. For each input with ``requires_grad``,
    up to ``n_coords`` randomly chosen coordinates are perturbed by +-eps.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.

    A coordinate whose +-eps perturbation flips the sign of any ReLU or leaky
    ReLU input is not differentiable over that interval; it is skipped and
    counted in ``stats["kinks"]`` when a dict is passed.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        if require_float64 and t.dtype != np.float64:
            raise TypeError(f"finite_difference_check needs float64 inputs, got {t.dtype}")
        t.grad = None

    out = op(*inputs)
    proj = rng.standard_normal(out.shape)
    (out * Tensor(proj)).sum().backward()
    _, base = _evaluate(op, inputs, proj)

    worst, checked, kinks = 0.0, 0, 0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        picks = rng.permutation(flat.size)
        taken = 0
        for idx in picks:
            if taken == n_coords:
                break
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus, pat_plus = _evaluate(op, inputs, proj)
            flat[idx] = orig - eps
            f_minus, pat_minus = _evaluate(op, inputs, proj)
            flat[idx] = orig
            if not (_same_pattern(pat_plus, base) and _same_pattern(pat_minus, base)):
                kinks += 1
                continue
            taken += 1
            numeric = (f_plus - f_minus) / (2 * eps)
            a = float(analytic.reshape(-1)[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        checked += taken
    if stats is not None:
        stats.update(checked=checked, kinks=kinks)
    return worst
