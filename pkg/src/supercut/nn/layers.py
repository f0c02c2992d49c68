"""Parameterised layers built on :mod:`supercut.nn.functional`.

Each layer remembers what its last ``forward`` needs, so a single
``backward`` call can follow it. Gradients accumulate into ``Param.grad``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import functional as F


@dataclass
class Param:
    """A trainable array with its gradient buffer and optimizer state."""

    data: np.ndarray
    grad: np.ndarray = None
    state: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    def params(self):
        """Trainable parameters, keyed by a stable name."""
        return {}

    def buffers(self):
        """Non-trainable arrays that belong in a checkpoint."""
        return {}

    def zero_grad(self):
        for p in self.params().values():
            p.zero_grad()


class Conv2d(Layer):
    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=None, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        if padding is None:
            padding = kernel_size // 2
        self.stride, self.padding = stride, padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Param(kaiming_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias = Param(np.zeros(out_channels))
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        self._x = x
        return F.conv2d(x, self.weight.data, self.bias.data, self.stride, self.padding)

    def backward(self, gy):
        gx, gw, gb = F.conv2d_backward(gy, self._x, self.weight.data, self.stride, self.padding)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx


class ConvTranspose2d(Layer):
    def __init__(self, in_channels, out_channels, kernel_size=3, stride=2, padding=None, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        if padding is None:
            padding = kernel_size // 2
        self.stride, self.padding = stride, padding
        # each output pixel sees roughly in_channels * k * k / stride**2 taps
        fan_in = max(1, in_channels * kernel_size * kernel_size // (stride * stride))
        self.weight = Param(kaiming_uniform(rng, (in_channels, out_channels, kernel_size, kernel_size), fan_in))
        self.bias = Param(np.zeros(out_channels))
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, output_size=None):
        self._x = x
        return F.conv_transpose2d(x, self.weight.data, self.bias.data, self.stride, self.padding, output_size)

    def backward(self, gy):
        gx, gw, gb = F.conv_transpose2d_backward(gy, self._x, self.weight.data, self.stride, self.padding)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx


class BatchNorm2d(Layer):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.gamma = Param(np.ones(channels))
        self.beta = Param(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum, self.eps = momentum, eps
        self._cache = None
        self._training = True

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, training=True):
        self._training = training
        y, self._cache = F.batchnorm2d(
            x, self.gamma.data, self.beta.data, self.running_mean, self.running_var, training, self.momentum, self.eps
        )
        if not training:
            self._cache = (x - self.running_mean.reshape(1, -1, 1, 1)) / np.sqrt(self.running_var + self.eps).reshape(
                1, -1, 1, 1
            )
        return y

    def backward(self, gy):
        if self._training:
            gx, gg, gb = F.batchnorm2d_backward(gy, self._cache)
        else:
            xhat = self._cache
            gg = (gy * xhat).sum(axis=(0, 2, 3))
            gb = gy.sum(axis=(0, 2, 3))
            gx = F.batchnorm2d_eval_backward(gy, self.gamma.data, self.running_var, self.eps)
        self.gamma.grad += gg
        self.beta.grad += gb
        return gx


class ConvBlock(Layer):
    """3x3 convolution (plain or transposed), batch norm, ReLU."""

    def __init__(self, in_channels, out_channels, stride=1, transpose=False, rng=None):
        conv_cls = ConvTranspose2d if transpose else Conv2d
        self.transpose = transpose
        self.conv = conv_cls(in_channels, out_channels, 3, stride, 1, rng=rng)
        self.bn = BatchNorm2d(out_channels)
        self._pre = None

    def params(self):
        out = {f"conv.{k}": v for k, v in self.conv.params().items()}
        out.update({f"bn.{k}": v for k, v in self.bn.params().items()})
        return out

    def buffers(self):
        return {f"bn.{k}": v for k, v in self.bn.buffers().items()}

    def forward(self, x, training=True, output_size=None):
        h = self.conv.forward(x, output_size) if self.transpose else self.conv.forward(x)
        h = self.bn.forward(h, training)
        self._pre = h
        return F.relu(h)

    def backward(self, gy):
        g = F.relu_backward(gy, self._pre)
        g = self.bn.backward(g)
        return self.conv.backward(g)
