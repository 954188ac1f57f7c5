"""Differentiable operations on :class:`Tensor`.

Every op computes its forward value with numpy and, when an input requires
grad, records a closure mapping the output gradient to input gradients.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_result

BCE_EPS = 1e-7


def _t(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else np.asarray(x))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic and reductions
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _t(a)
    b = _t(b, a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out.astype(a.dtype, copy=False), "add", (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _t(a)
    b = _t(b, a)
    out = (a.data * b.data).astype(a.dtype, copy=False)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(out, "mul", (a, b), backward)


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return make_result(
        np.asarray(a.data.sum(), dtype=a.dtype), "sum", (a,),
        lambda g: (np.broadcast_to(g, shape).astype(a.dtype),),
    )


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return make_result(
        np.asarray(a.data.mean(), dtype=a.dtype), "mean", (a,),
        lambda g: (np.broadcast_to(g / n, shape).astype(a.dtype),),
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return make_result(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(src),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Stack tensors along an existing axis (the channel axis by default)."""
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors, backward)


def where_items(mask: np.ndarray, a: Tensor, b) -> Tensor:
    """Per-item selection along axis 0: item i comes from ``a`` where mask[i] else ``b``."""
    b = _t(b, a)
    if a.shape != b.shape:
        raise ValueError(f"where_items needs equal shapes, got {a.shape} and {b.shape}")
    m = np.asarray(mask, dtype=bool).reshape((-1,) + (1,) * (a.ndim - 1))
    out = np.where(m, a.data, b.data)

    def backward(g):
        return np.where(m, g, 0).astype(g.dtype), np.where(m, 0, g).astype(g.dtype)

    return make_result(out, "where_items", (a, b), backward)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

# When a list is installed here, piecewise-linear activations append the sign
# pattern of their input; the gradient checker uses it to spot perturbations
# that straddle a kink.
_kink_log: list | None = None


def _log_kinks(pos: np.ndarray) -> None:
    if _kink_log is not None:
        _kink_log.append(np.packbits(pos))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    _log_kinks(pos)
    return make_result(np.where(pos, x.data, 0).astype(x.dtype), "relu", (x,), lambda g: (g * pos,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    _log_kinks(pos)
    scale = np.where(pos, 1.0, slope).astype(x.dtype)
    return make_result(x.data * scale, "leaky_relu", (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    y = (0.5 * (1.0 + np.tanh(0.5 * x.data))).astype(x.dtype)
    return make_result(y, "sigmoid", (x,), lambda g: (g * y * (1 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, "tanh", (x,), lambda g: (g * (1 - y * y),))


def activation(x: Tensor, kind: str | None, slope: float = 0.2) -> Tensor:
    if kind is None or kind == "none":
        return x
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def binary_cross_entropy(p: Tensor, t) -> Tensor:
    """Elementwise ``-t log p + (t - 1) log(1 - p)`` with p clamped to [1e-7, 1 - 1e-7].

    The gradient ``(p - t) / (p (1 - p))`` is evaluated at the clamped p and
    passed through the clamp unchanged.
    """
    t = np.broadcast_to(np.asarray(t, dtype=p.dtype), p.shape)
    pc = np.clip(p.data.astype(np.float64), BCE_EPS, 1.0 - BCE_EPS)
    loss = -t * np.log(pc) + (t - 1.0) * np.log1p(-pc)

    def backward(g):
        return ((g * (pc - t) / (pc * (1.0 - pc))).astype(p.dtype),)

    return make_result(loss.astype(p.dtype), "binary_cross_entropy", (p,), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over all elements."""
    target = _t(target, pred)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        d = (2.0 / n) * g * diff
        return d.astype(pred.dtype), (-d).astype(pred.dtype)

    return make_result(np.asarray(np.mean(diff * diff), dtype=pred.dtype), "mse_loss", (pred, target), backward)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv_transposed_output_size(size: int, k: int, stride: int, pad: int, out_pad: int = 0) -> int:
    return (size - 1) * stride - 2 * pad + k + out_pad


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Patches of a padded N x C x Hp x Wp array as an (N*ho*wo) x (C*k*k) matrix."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)


def _col2im(cols_t: np.ndarray, c: int, n: int, hp: int, wp: int, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add patch values back onto a canvas.

    ``cols_t`` is the (C*k*k) x (N*ho*wo) transpose of an im2col matrix; the
    result is laid out C x N x hp x wp (channel-major) so each kernel offset
    reads one contiguous block.
    """
    blocks = cols_t.reshape(c, k, k, n, ho, wo)
    out = np.zeros((c, n, hp, wp), dtype=cols_t.dtype)
    h_end, w_end = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + h_end : stride, j : j + w_end : stride] += blocks[:, i, j]
    return out


def _check_conv_args(stride: int, pad: int) -> None:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    x: N x Cin x H x W, weight: Cout x Cin x k x k, bias: Cout or None.
    """
    _check_conv_args(stride, pad)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} has {cin} channels, weight {weight.shape} expects {wcin}")
    if kh != kw:
        raise ValueError(f"conv2d needs square kernels, got weight {weight.shape}")
    k = kh
    if k > h + 2 * pad or k > w + 2 * pad:
        raise ValueError(f"kernel {k} larger than padded input {x.shape} with pad {pad}")
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(w, k, stride, pad)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gx = gw = gb = None
        if x.requires_grad:
            gm_t = g.transpose(1, 0, 2, 3).reshape(cout, n * ho * wo)
            gxp = _col2im(wmat.T @ gm_t, cin, n, h + 2 * pad, w + 2 * pad, k, stride, ho, wo)
            gx = gxp[:, :, pad : pad + h, pad : pad + w].transpose(1, 0, 2, 3)
        if weight.requires_grad:
            gw = (gm.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = gm.sum(axis=0)
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(np.ascontiguousarray(out), "conv2d", inputs, backward)


def conv2d_transposed(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    pad: int = 0,
    out_pad: int = 0,
) -> Tensor:
    """Fractionally strided convolution, the adjoint of :func:`conv2d`.

    x: N x Cin x H x W, weight: Cin x Cout x k x k (same tensor a conv2d mapping
    Cout -> Cin would use). Output side is (H - 1) * stride - 2 * pad + k + out_pad.
    """
    _check_conv_args(stride, pad)
    if not 0 <= out_pad < stride:
        raise ValueError(f"out_pad must satisfy 0 <= out_pad < stride, got out_pad={out_pad}, stride={stride}")
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d_transposed expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if wcin != cin:
        raise ValueError(
            f"conv2d_transposed channel mismatch: input {x.shape} has {cin} channels, weight {weight.shape} expects {wcin}"
        )
    if kh != kw:
        raise ValueError(f"conv2d_transposed needs square kernels, got weight {weight.shape}")
    k = kh
    hc = (h - 1) * stride + k + out_pad
    wc = (w - 1) * stride + k + out_pad
    ho, wo = hc - 2 * pad, wc - 2 * pad
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d_transposed produces empty output for input {x.shape}, k={k}, pad={pad}")

    xm = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, cin)
    wmat = weight.data.reshape(cin, cout * k * k)
    xm_t = x.data.transpose(1, 0, 2, 3).reshape(cin, n * h * w)
    canvas = _col2im(wmat.T @ xm_t, cout, n, hc, wc, k, stride, h, w)
    out = canvas[:, :, pad : pad + ho, pad : pad + wo].transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    def backward(g):
        gx = gw = gb = None
        gcanvas = np.zeros((n, cout, hc, wc), dtype=g.dtype)
        gcanvas[:, :, pad : pad + ho, pad : pad + wo] = g
        gcols = _im2col(gcanvas, k, stride, h, w)
        if x.requires_grad:
            gx = (gcols @ wmat.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2)
        if weight.requires_grad:
            gw = (xm.T @ gcols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(np.ascontiguousarray(out), "conv2d_transposed", inputs, backward)
