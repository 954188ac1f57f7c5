"""Finite-difference checks over the op suite and a tiny end-to-end model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import (
    BatchNorm2d,
    Tensor,
    binary_cross_entropy,
    conv2d,
    conv2d_transposed,
    finite_difference_check,
    leaky_relu,
    make_result,
    mse_loss,
    relu,
    sigmoid,
    tanh,
)
from .networks import Converter, discriminate_domain, discriminate_real_fake, init_parameters

TOLERANCE = 1e-3
E2E_WIDTH = 1 / 16


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)


def _away_from_zero(a: np.ndarray, margin: float = 0.05) -> np.ndarray:
    # keeps piecewise-linear activations clear of their kink under +-eps
    return np.where(np.abs(a) < margin, np.sign(a + 1e-12) * margin, a) + 0.0


def _faulty_square(x: Tensor) -> Tensor:
    # test fixture: derivative is off by 10%
    return make_result(x.data * x.data, "faulty_square", (x,), lambda g: (g * 2.2 * x.data,))


def _end_to_end(dtype, gen: np.random.Generator):
    conv = Converter.create(E2E_WIDTH, seed=0, dtype=dtype)
    d_rf = init_parameters("disc_rf", E2E_WIDTH, 0, dtype)
    d_da = init_parameters("disc_da", E2E_WIDTH, 0, dtype)
    # unit-gain filters put fewer activations within eps of a kink than the
    # 0.02 training init, so far fewer coordinates are skipped
    for net in (conv.encoder, conv.decoder, d_rf, d_da):
        for w in net.weights.values():
            fan_in = w.data[0].size if w.data.ndim == 4 else 1
            w.data[...] = gen.normal(0.0, 1.0 / np.sqrt(fan_in), w.shape)
    src = Tensor(gen.uniform(-1, 1, (2, 3, 64, 64)).astype(dtype))
    watched = [
        conv.encoder.weights["conv1"],
        conv.decoder.weights["fconv5"],
        d_rf.weights["conv3"],
        d_da.weights["conv1"],
    ]

    def loss(*_params):
        fake = conv(src, training=True)
        rf = binary_cross_entropy(discriminate_real_fake(d_rf, fake), 1.0).mean()
        da = binary_cross_entropy(discriminate_domain(d_da, src, fake), 1.0).mean()
        return rf * 0.5 + da * 0.5

    return loss, watched


def suite(bits: int = 64, seed: int = 0, inject_fault: bool = False) -> list[tuple[str, Callable, list[Tensor]]]:
    """(name, op, inputs) triples; ops take the inputs positionally."""
    dtype = np.float64 if bits == 64 else np.float32
    gen = np.random.default_rng(seed)

    def t(*shape, lo=-1.0, hi=1.0, grad=True, nonzero=False):
        a = gen.uniform(lo, hi, shape)
        if nonzero:
            a = _away_from_zero(a)
        return Tensor(a.astype(dtype), requires_grad=grad)

    bn = BatchNorm2d(3, dtype=dtype)
    bn.gamma.data[:] = gen.uniform(0.5, 1.5, 3)
    bn.beta.data[:] = gen.uniform(-0.5, 0.5, 3)
    target = gen.uniform(-1, 1, (2, 3, 4, 4)).astype(dtype)
    labels = gen.integers(0, 2, 16).astype(dtype)

    cases: list[tuple[str, Callable, list[Tensor]]] = [
        ("conv2d", lambda x, w, b: conv2d(x, w, b, stride=2, pad=2), [t(2, 3, 9, 9), t(4, 3, 5, 5), t(4)]),
        (
            "conv2d_transposed",
            lambda x, w, b: conv2d_transposed(x, w, b, stride=2, pad=2, out_pad=1),
            [t(2, 4, 4, 4), t(4, 3, 5, 5), t(3)],
        ),
        ("batch_norm2d[train]", lambda x, g, b: bn(x, training=True), [t(4, 3, 3, 3), bn.gamma, bn.beta]),
        ("relu", relu, [t(3, 4, 5, nonzero=True)]),
        ("leaky_relu", lambda x: leaky_relu(x, 0.2), [t(3, 4, 5, nonzero=True)]),
        ("sigmoid", sigmoid, [t(3, 4, 5, lo=-4, hi=4)]),
        ("tanh", tanh, [t(3, 4, 5, lo=-3, hi=3)]),
        ("binary_cross_entropy", lambda p: binary_cross_entropy(p, labels), [t(16, lo=0.05, hi=0.95)]),
        ("loss_mse", lambda x: mse_loss(x, target), [t(2, 3, 4, 4)]),
    ]
    loss, watched = _end_to_end(dtype, gen)
    cases.append((f"converter+discriminators[width={E2E_WIDTH:g}]", loss, watched))
    if inject_fault:
        cases.append(("faulty_square[fixture]", _faulty_square, [t(5, lo=0.5, hi=1.0)]))
    return cases


def run_suite(bits: int = 64, seed: int = 0, inject_fault: bool = False, n_coords: int = 20) -> list[CheckResult]:
    results = []
    for name, op, inputs in suite(bits, seed, inject_fault):
        # float32 differences need a larger step to rise above rounding noise
        eps = 1e-4 if bits == 64 else 1e-2
        err = finite_difference_check(op, inputs, eps=eps, n_coords=n_coords, seed=seed, require_float64=bits == 64)
        results.append(CheckResult(name, err))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'op':<{width}}  max_rel_error  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:13.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
