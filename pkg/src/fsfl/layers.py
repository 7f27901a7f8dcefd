"""Layer objects for the model zoo.

Convolutional and dense layers can carry a trainable per-output-element
scaling tensor whose first dimension equals the number of output elements
and whose remaining dimensions are singletons. Scaling is applied as a
weight pre-multiplication, so with all factors at 1 the forward output is
bit-identical to the unscaled layer.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor

GROUP_WEIGHTS = "weights"
GROUP_SCALING = "scaling"
GROUP_BIAS_BN = "bias_bn"


def kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d:
    def __init__(self, name: str, in_ch: int, out_ch: int, kernel: int,
                 stride: int = 1, padding: int = 0, bias: bool = True,
                 scaled: bool = False, rng: Optional[np.random.Generator] = None):
        self.name = name
        self.stride = stride
        self.padding = padding
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(
            kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None
        self.scale: Optional[Tensor] = None
        if scaled:
            self.scale = Tensor(np.ones((out_ch, 1, 1, 1)), requires_grad=True)

    def forward(self, x: Tensor, train: bool) -> Tensor:
        w = self.weight if self.scale is None else ag.mul(self.weight, self.scale)
        return ag.conv2d(x, w, self.bias, stride=self.stride, padding=self.padding)

    def named_params(self):
        yield f"{self.name}.weight", self.weight, GROUP_WEIGHTS
        if self.bias is not None:
            yield f"{self.name}.bias", self.bias, GROUP_BIAS_BN
        if self.scale is not None:
            yield f"{self.name}.scale", self.scale, GROUP_SCALING

    def named_buffers(self):
        return ()


class Dense:
    def __init__(self, name: str, in_features: int, out_features: int,
                 bias: bool = True, scaled: bool = False,
                 rng: Optional[np.random.Generator] = None):
        self.name = name
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(
            kaiming_uniform(rng, (out_features, in_features), in_features),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) if bias else None
        self.scale: Optional[Tensor] = None
        if scaled:
            self.scale = Tensor(np.ones((out_features, 1)), requires_grad=True)

    def forward(self, x: Tensor, train: bool) -> Tensor:
        w = self.weight if self.scale is None else ag.mul(self.weight, self.scale)
        return ag.dense(x, w, self.bias)

    def named_params(self):
        yield f"{self.name}.weight", self.weight, GROUP_WEIGHTS
        if self.bias is not None:
            yield f"{self.name}.bias", self.bias, GROUP_BIAS_BN
        if self.scale is not None:
            yield f"{self.name}.scale", self.scale, GROUP_SCALING

    def named_buffers(self):
        return ()


class BatchNorm2d:
    """Per-channel batch norm with running statistics (population variance).

    ``stats_frozen`` forces eval-mode behaviour: running buffers are used to
    normalize and are never updated, regardless of the train flag.
    """

    def __init__(self, name: str, channels: int, momentum: float = 0.1,
                 eps: float = 1e-5):
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.stats_frozen = False

    def forward(self, x: Tensor, train: bool) -> Tensor:
        training = train and not self.stats_frozen
        if training:
            mu = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3))
            self.running_mean += self.momentum * (mu - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
        return ag.batch_norm2d(x, self.gamma, self.beta, self.running_mean,
                               self.running_var, training=training, eps=self.eps)

    def named_params(self):
        yield f"{self.name}.gamma", self.gamma, GROUP_BIAS_BN
        yield f"{self.name}.beta", self.beta, GROUP_BIAS_BN

    def named_buffers(self):
        yield f"{self.name}.running_mean", self.running_mean
        yield f"{self.name}.running_var", self.running_var

    def set_buffer(self, key: str, value: np.ndarray):
        if key == "running_mean":
            self.running_mean = value.copy()
        elif key == "running_var":
            self.running_var = value.copy()
        else:
            raise KeyError(key)


class ReLU:
    def __init__(self, name: str = "relu"):
        self.name = name

    def forward(self, x: Tensor, train: bool) -> Tensor:
        return ag.relu(x)

    def named_params(self):
        return ()

    def named_buffers(self):
        return ()


class MaxPool2d:
    def __init__(self, name: str = "pool", kernel: int = 2):
        self.name = name
        self.kernel = kernel

    def forward(self, x: Tensor, train: bool) -> Tensor:
        return ag.max_pool2d(x, self.kernel)

    def named_params(self):
        return ()

    def named_buffers(self):
        return ()


class Flatten:
    def __init__(self, name: str = "flatten"):
        self.name = name

    def forward(self, x: Tensor, train: bool) -> Tensor:
        return ag.flatten(x)

    def named_params(self):
        return ()

    def named_buffers(self):
        return ()
