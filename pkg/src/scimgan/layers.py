"""Trainable layers assembled by the network builder.

All weights are initialized as Gaussian draws with standard deviation 0.02
(the convention of the image-translation GAN lineage this follows); biases
start at zero.  The init value is recorded in checkpoints via INIT_STDDEV.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor

INIT_STDDEV = 0.02


def _init_weight(rng: Rng, shape) -> Tensor:
    n = int(np.prod(shape))
    return Tensor(rng.normal(0.0, INIT_STDDEV, size=n).reshape(shape), requires_grad=True)


def _init_bias(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


class Layer:
    """Forward transform with (possibly zero) named parameter tensors."""

    tag = "layer"

    def parameters(self) -> list[tuple[str, Tensor]]:
        return []

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class Conv2d(Layer):
    tag = "conv"

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, padding: int, rng: Rng):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.weight = _init_weight(rng, (out_channels, in_channels, kernel, kernel))
        self.bias = _init_bias(out_channels)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class TransposedConv2d(Layer):
    tag = "tconv"

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, padding: int, rng: Rng):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.weight = _init_weight(rng, (in_channels, out_channels, kernel, kernel))
        self.bias = _init_bias(out_channels)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x):
        return T.transposed_conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Dense(Layer):
    """Fully connected layer; rank-4 inputs are flattened per sample."""

    tag = "dense"

    def __init__(self, in_features: int, out_features: int, rng: Rng):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = _init_weight(rng, (in_features, out_features))
        self.bias = _init_bias(out_features)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x):
        if len(x.shape) > 2:
            x = T.reshape(x, (x.shape[0], self.in_features))
        return T.add(T.matmul(x, self.weight), self.bias)


class InstanceNorm(Layer):
    tag = "inorm"

    def forward(self, x):
        return T.instance_norm(x)


class Activation(Layer):
    tag = "act"

    def __init__(self, kind: str, slope: float = 0.2):
        if kind not in ("relu", "leaky_relu", "tanh", "sigmoid"):
            raise ValueError(f"unknown activation '{kind}'")
        self.kind = kind
        self.slope = slope

    def forward(self, x):
        if self.kind == "relu":
            return T.relu(x)
        if self.kind == "leaky_relu":
            return T.leaky_relu(x, self.slope)
        if self.kind == "tanh":
            return T.tanh(x)
        return T.sigmoid(x)


class ResidualBlock(Layer):
    """conv-norm-relu-conv-norm plus identity skip; channel-preserving."""

    tag = "resblock"

    def __init__(self, channels: int, kernel: int, rng: Rng):
        padding = kernel // 2
        self.channels = channels
        self.conv1 = Conv2d(channels, channels, kernel, 1, padding, rng)
        self.conv2 = Conv2d(channels, channels, kernel, 1, padding, rng)

    def parameters(self):
        return [("conv1." + n, t) for n, t in self.conv1.parameters()] + [
            ("conv2." + n, t) for n, t in self.conv2.parameters()
        ]

    def forward(self, x):
        h = T.relu(T.instance_norm(self.conv1.forward(x)))
        h = T.instance_norm(self.conv2.forward(h))
        return T.add(x, h)
