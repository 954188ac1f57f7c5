"""Converter (encoder + decoder) and the two discriminators.

Layer tables for a 64 x 64 input at width 1:

    encoder / disc_rf / disc_da
        conv1  5x5 s2 p2  {3, 3, 6} -> 128   leaky-relu
        conv2  5x5 s2 p2  128 -> 256         bn, leaky-relu
        conv3  5x5 s2 p2  256 -> 512         bn, leaky-relu
        conv4  5x5 s2 p2  512 -> 1024        bn, leaky-relu
        conv5  4x4 s1 p0  1024 -> {64, 1, 1} {bn + leaky-relu, sigmoid, sigmoid}

    decoder
        conv1   1x1 64 -> 4*4*1024, reshaped to 1024 x 4 x 4, bn, relu
        fconv2  5x5 s1/2 1024 -> 512         bn, relu
        fconv3  5x5 s1/2 512 -> 256          bn, relu
        fconv4  5x5 s1/2 256 -> 128          bn, relu
        fconv5  5x5 s1/2 128 -> 3            tanh

conv5 spans the whole 4 x 4 map so the code (and each discriminator score)
is 1 x 1 spatially. Fractional-stride layers are transposed convolutions with
stride 2, pad 2, out_pad 1, which exactly double the side length.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import rng as rngmod
from .autodiff import BatchNorm2d, Tensor, activation, concat, conv2d, conv2d_transposed, reshape

IMAGE_SIDE = 64
INIT_STD = 0.02
LEAKY_SLOPE = 0.2
NETWORK_IDS = ("encoder", "decoder", "disc_rf", "disc_da")


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # "conv" | "tconv" | "reshape"
    in_channels: int
    filters: int
    size: int = 1
    stride: int = 1
    pad: int = 0
    out_pad: int = 0
    batch_norm: bool = False
    act: str | None = None
    # layers followed by batch norm (directly or after the decoder reshape)
    # carry no bias since beta plays that role
    bias: bool = False

    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "conv":
            return (self.filters, self.in_channels, self.size, self.size)
        if self.kind == "tconv":
            return (self.in_channels, self.filters, self.size, self.size)
        return ()


def scaled(channels: int, width: float) -> int:
    return max(1, int(round(channels * width)))


def layer_specs(net_id: str, width: float = 1.0) -> list[LayerSpec]:
    if not 0.0 < width <= 1.0:
        raise ValueError(f"width multiplier must lie in (0, 1], got {width}")
    if net_id == "decoder":
        code, c4 = scaled(64, width), scaled(1024, width)
        c8, c16, c32 = scaled(512, width), scaled(256, width), scaled(128, width)
        up = dict(kind="tconv", size=5, stride=2, pad=2, out_pad=1)
        return [
            LayerSpec("conv1", "conv", code, 16 * c4, size=1),
            LayerSpec("reshape", "reshape", 16 * c4, c4, batch_norm=True, act="relu"),
            LayerSpec("fconv2", in_channels=c4, filters=c8, batch_norm=True, act="relu", **up),
            LayerSpec("fconv3", in_channels=c8, filters=c16, batch_norm=True, act="relu", **up),
            LayerSpec("fconv4", in_channels=c16, filters=c32, batch_norm=True, act="relu", **up),
            LayerSpec("fconv5", in_channels=c32, filters=3, act="tanh", bias=True, **up),
        ]
    if net_id not in ("encoder", "disc_rf", "disc_da"):
        raise ValueError(f"unknown network id {net_id!r}")
    in_ch = 6 if net_id == "disc_da" else 3
    chans = [scaled(c, width) for c in (128, 256, 512, 1024)]
    down = dict(kind="conv", size=5, stride=2, pad=2, act="leaky_relu")
    specs = [LayerSpec("conv1", in_channels=in_ch, filters=chans[0], bias=True, **down)]
    for i in range(1, 4):
        specs.append(LayerSpec(f"conv{i + 1}", in_channels=chans[i - 1], filters=chans[i], batch_norm=True, **down))
    if net_id == "encoder":
        specs.append(LayerSpec("conv5", "conv", chans[3], scaled(64, width), size=4, batch_norm=True, act="leaky_relu"))
    else:
        specs.append(LayerSpec("conv5", "conv", chans[3], 1, size=4, act="sigmoid", bias=True))
    return specs


class Network:
    """Parameters, batch-norm state and forward pass of one architecture."""

    def __init__(self, net_id: str, width: float = 1.0, seed: int = 0, dtype=np.float32):
        self.net_id = net_id
        self.width = float(width)
        self.dtype = np.dtype(dtype)
        self.specs = layer_specs(net_id, width)
        self.weights: dict[str, Tensor] = {}
        self.biases: dict[str, Tensor] = {}
        self.norms: dict[str, BatchNorm2d] = {}
        gen = rngmod.stream(seed, f"init/{net_id}")
        for spec in self.specs:
            if spec.kind != "reshape":
                w = gen.normal(0.0, INIT_STD, size=spec.weight_shape())
                self.weights[spec.name] = Tensor(w.astype(self.dtype), requires_grad=True)
            if spec.bias:
                self.biases[spec.name] = Tensor(np.zeros(spec.filters, dtype=self.dtype), requires_grad=True)
            if spec.batch_norm:
                self.norms[spec.name] = BatchNorm2d(spec.filters, dtype=self.dtype)

    @property
    def in_channels(self) -> int:
        return self.specs[0].in_channels

    @property
    def out_channels(self) -> int:
        return self.specs[-1].filters

    def parameters(self) -> dict[str, Tensor]:
        """Learnable tensors in layer order."""
        out: dict[str, Tensor] = {}
        for spec in self.specs:
            if spec.name in self.weights:
                out[f"{spec.name}.weight"] = self.weights[spec.name]
            if spec.name in self.biases:
                out[f"{spec.name}.bias"] = self.biases[spec.name]
            if spec.name in self.norms:
                out[f"{spec.name}.bn.gamma"] = self.norms[spec.name].gamma
                out[f"{spec.name}.bn.beta"] = self.norms[spec.name].beta
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, bn in self.norms.items():
            out[f"{name}.bn.running_mean"] = bn.running_mean
            out[f"{name}.bn.running_var"] = bn.running_var
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.parameters().items()}
        out.update(self.buffers())
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        for key, target in list(params.items()) + [(k, None) for k in self.buffers()]:
            if key not in arrays:
                raise KeyError(f"{self.net_id}: missing array {key!r}")
            current = target.data if target is not None else self.buffers()[key]
            src = np.asarray(arrays[key])
            if src.shape != current.shape:
                raise ValueError(f"{self.net_id}.{key}: expected shape {current.shape}, got {src.shape}")
            current[...] = src

    def bn_updates(self) -> dict[str, int]:
        return {name: bn.updates for name, bn in self.norms.items()}

    def set_bn_updates(self, counts: dict[str, int]) -> None:
        for name, n in counts.items():
            self.norms[name].updates = int(n)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def forward(self, x: Tensor, training: bool = True, update_stats: bool = True, trace: list | None = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"{self.net_id} expects N x {self.in_channels} x H x W input, got {x.shape}")
        h = x
        for spec in self.specs:
            if spec.kind == "conv":
                h = conv2d(h, self.weights[spec.name], self.biases.get(spec.name), spec.stride, spec.pad)
            elif spec.kind == "tconv":
                h = conv2d_transposed(
                    h, self.weights[spec.name], self.biases.get(spec.name), spec.stride, spec.pad, spec.out_pad
                )
            else:
                h = reshape(h, (h.shape[0], spec.filters, 4, 4))
            if spec.batch_norm:
                h = self.norms[spec.name](h, training=training, update_stats=update_stats)
            h = activation(h, spec.act, LEAKY_SLOPE)
            if trace is not None:
                trace.append((spec.name, h.shape))
        return h

    __call__ = forward

    @contextlib.contextmanager
    def frozen(self) -> Iterator["Network"]:
        """Temporarily stop recording gradients for this network's parameters."""
        params = list(self.parameters().values())
        flags = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, f in zip(params, flags):
                p.requires_grad = f

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None


def init_parameters(net_id: str, width: float = 1.0, seed: int = 0, dtype=np.float32) -> Network:
    """Build a network with N(0, 0.02^2) filters, zero biases and identity batch norm.

    Each network id draws from its own sub-stream of ``seed``.
    """
    return Network(net_id, width, seed, dtype)


def _check_image(x: Tensor, channels: int = 3, what: str = "image") -> None:
    if x.ndim != 4 or x.shape[1:] != (channels, IMAGE_SIDE, IMAGE_SIDE):
        raise ValueError(f"{what} must be N x {channels} x {IMAGE_SIDE} x {IMAGE_SIDE}, got {x.shape}")


def encode(encoder: Network, image: Tensor, training: bool = True, update_stats: bool = True, trace=None) -> Tensor:
    _check_image(image)
    return encoder.forward(image, training, update_stats, trace)


def decode(decoder: Network, code: Tensor, training: bool = True, update_stats: bool = True, trace=None) -> Tensor:
    expected = decoder.in_channels
    if code.ndim != 4 or code.shape[1:] != (expected, 1, 1):
        raise ValueError(f"code must be N x {expected} x 1 x 1, got {code.shape}")
    return decoder.forward(code, training, update_stats, trace)


class Converter:
    """Encoder followed by decoder: source image in, target image out."""

    def __init__(self, encoder: Network, decoder: Network):
        if encoder.out_channels != decoder.in_channels:
            raise ValueError(
                f"encoder code size {encoder.out_channels} does not match decoder input {decoder.in_channels}"
            )
        self.encoder = encoder
        self.decoder = decoder

    @classmethod
    def create(cls, width: float = 1.0, seed: int = 0, dtype=np.float32) -> "Converter":
        return cls(init_parameters("encoder", width, seed, dtype), init_parameters("decoder", width, seed, dtype))

    def __call__(self, source: Tensor, training: bool = True, update_stats: bool = True) -> Tensor:
        return convert(self, source, training, update_stats)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"encoder.{k}": v for k, v in self.encoder.parameters().items()}
        out.update({f"decoder.{k}": v for k, v in self.decoder.parameters().items()})
        return out

    def zero_grad(self) -> None:
        self.encoder.zero_grad()
        self.decoder.zero_grad()


def convert(converter: Converter, source: Tensor, training: bool = True, update_stats: bool = True) -> Tensor:
    code = encode(converter.encoder, source, training, update_stats)
    return decode(converter.decoder, code, training, update_stats)


def discriminate_real_fake(disc: Network, target: Tensor, training: bool = True, update_stats: bool = True) -> Tensor:
    """Probability per item that ``target`` is a real photograph, shape (N,)."""
    _check_image(target, what="target")
    out = disc.forward(target, training, update_stats)
    return reshape(out, (out.shape[0],))


def discriminate_domain(
    disc: Network, source: Tensor, target: Tensor, training: bool = True, update_stats: bool = True
) -> Tensor:
    """Probability per pair that ``target`` depicts the content of ``source``, shape (N,).

    The pair is stacked along channels (source first) into N x 6 x 64 x 64.
    """
    if source.shape[0] != target.shape[0]:
        raise ValueError(f"batch size mismatch: source {source.shape} vs target {target.shape}")
    _check_image(source, what="source")
    _check_image(target, what="target")
    out = disc.forward(concat([source, target], axis=1), training, update_stats)
    return reshape(out, (out.shape[0],))
