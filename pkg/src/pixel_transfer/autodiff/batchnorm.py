from __future__ import annotations

import warnings

import numpy as np

from .tensor import Tensor, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class BatchNormWarning(UserWarning):
    """Eval-mode normalization ran before any running-statistics update."""


class BatchNorm2d:
    """Per-channel batch normalization state.

    ``gamma``/``beta`` are learnable; running statistics follow
    ``running <- momentum * running + (1 - momentum) * batch``.
    """

    def __init__(self, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS, dtype=np.float32):
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must lie in (0, 1), got {momentum}")
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.updates = 0
        self.training = True

    def __call__(self, x: Tensor, training: bool | None = None, update_stats: bool = True) -> Tensor:
        mode = self.training if training is None else training
        return batch_norm2d(x, self, training=mode, update_stats=update_stats)


def batch_norm2d(x: Tensor, state: BatchNorm2d, training: bool = True, update_stats: bool = True) -> Tensor:
    """Normalize an N x C x H x W tensor per channel.

    Train mode uses biased batch statistics over (N, H, W) and, when
    ``update_stats`` is set, folds them into the running statistics. Eval mode
    uses the running statistics and is a pure function of its inputs.
    """
    if x.ndim != 4 or x.shape[1] != state.channels:
        raise ValueError(f"batch_norm2d expects N x {state.channels} x H x W, got {x.shape}")
    n, c, h, w = x.shape
    gamma, beta = state.gamma, state.beta
    g4 = gamma.data.reshape(1, c, 1, 1)

    if not training:
        if state.updates == 0:
            warnings.warn("batch_norm2d in eval mode before any running-stat update", BatchNormWarning, stacklevel=2)
        inv = (1.0 / np.sqrt(state.running_var.astype(np.float64) + state.eps)).astype(x.dtype)
        xhat = (x.data - state.running_mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
        out = xhat * g4 + beta.data.reshape(1, c, 1, 1)

        def backward_eval(g):
            return (
                g * (g4 * inv.reshape(1, c, 1, 1)),
                (g * xhat).sum(axis=(0, 2, 3)),
                g.sum(axis=(0, 2, 3)),
            )

        return make_result(out.astype(x.dtype, copy=False), "batch_norm2d_eval", (x, gamma, beta), backward_eval)

    m = n * h * w
    if m < 2:
        raise ValueError(f"batch_norm2d in train mode needs >= 2 values per channel, got input {x.shape}")
    mu = x.data.mean(axis=(0, 2, 3))
    xc = x.data - mu.reshape(1, c, 1, 1)
    var = (xc * xc).mean(axis=(0, 2, 3))
    inv = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype)
    xhat = xc * inv.reshape(1, c, 1, 1)
    out = xhat * g4 + beta.data.reshape(1, c, 1, 1)

    if update_stats:
        mom = state.momentum
        state.running_mean = (mom * state.running_mean + (1 - mom) * mu).astype(state.running_mean.dtype)
        state.running_var = (mom * state.running_var + (1 - mom) * var).astype(state.running_var.dtype)
        state.updates += 1

    def backward(g):
        gxhat = g * g4
        s1 = gxhat.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        s2 = (gxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        gx = (inv.reshape(1, c, 1, 1) / m) * (m * gxhat - s1 - xhat * s2)
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_result(out.astype(x.dtype, copy=False), "batch_norm2d", (x, gamma, beta), backward)
