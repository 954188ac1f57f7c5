from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import Tensor


class MissingGradientError(RuntimeError):
    pass


class SGDMomentum:
    """Classical momentum: ``v <- mu * v + g``; ``theta <- theta - lr * v``.

    ``params`` maps names to tensors; velocity buffers start at zero and share
    each parameter's shape and dtype.
    """

    kind = "sgd"

    def __init__(self, params: Mapping[str, Tensor], lr: float, momentum: float = 0.5):
        self.params = dict(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.steps = 0
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def _grads(self) -> dict[str, np.ndarray]:
        missing = [name for name, p in self.params.items() if p.grad is None]
        if missing:
            raise MissingGradientError(f"no gradient for parameter(s): {', '.join(missing)}")
        return {name: p.grad for name, p in self.params.items()}

    def step(self) -> None:
        grads = self._grads()
        mu, lr = self.momentum, self.lr
        for name, p in self.params.items():
            v = self.velocity[name]
            v *= mu
            v += grads[name]
            p.data -= (lr * v).astype(p.dtype, copy=False)
        self.steps += 1

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"velocity/{k}": v for k, v in self.velocity.items()}

    def load_buffers(self, buffers: Mapping[str, np.ndarray]) -> None:
        for name in self.velocity:
            self.velocity[name][...] = buffers[f"velocity/{name}"]


class Adam(SGDMomentum):
    """Adam with bias correction; beta1 defaults to 0.5 as in DCGAN-style training."""

    kind = "adam"

    def __init__(self, params: Mapping[str, Tensor], lr: float, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr, momentum=beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.second = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        grads = self._grads()
        b1, b2 = self.momentum, self.beta2
        t = self.steps + 1
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for name, p in self.params.items():
            g = grads[name]
            m, s = self.velocity[name], self.second[name]
            m *= b1
            m += (1 - b1) * g
            s *= b2
            s += (1 - b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(s / c2) + self.eps)
            p.data -= update.astype(p.dtype, copy=False)
        self.steps = t

    def buffers(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.velocity.items()}
        out.update({f"v/{k}": v for k, v in self.second.items()})
        return out

    def load_buffers(self, buffers: Mapping[str, np.ndarray]) -> None:
        for name in self.velocity:
            self.velocity[name][...] = buffers[f"m/{name}"]
            self.second[name][...] = buffers[f"v/{name}"]


def make_optimizer(kind: str, params: Mapping[str, Tensor], lr: float, momentum: float) -> SGDMomentum:
    if kind == "sgd":
        return SGDMomentum(params, lr, momentum)
    if kind == "adam":
        return Adam(params, lr, beta1=momentum)
    raise ValueError(f"unknown optimizer {kind!r}")
