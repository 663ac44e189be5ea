"""Layer objects and the bottleneck residual block in its four variants.

standard             conv1x1-BN-ReLU > conv3x3-BN-ReLU > conv1x1-BN, + skip, ReLU
headtail             shuffle > (standard branch) > inverse, + skip, ReLU
compact              conv1x1-BN-ReLU > shuffle > conv3x3 > inverse > BN-ReLU > conv1x1-BN, + skip, ReLU
standard_with_shift  shift > (standard branch), + unshifted skip, ReLU
"""
from typing import Dict, List, Optional

import numpy as np

from core.config import ShiftSpec, check_divisibility
from core.interfaces import Layer
from core.models import BatchNormParams, BlockVariant, Conv2dParams, LinearParams
from modules.nn import layers as F
from modules.temporal.ops import inverse_shuffle_array, shift_array, shift_backward_array, shuffle_array


def he_normal(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    """Fan-out scaled Gaussian for conv weights (out, in, k_h, k_w)."""
    fan_out = shape[0] * shape[2] * shape[3]
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_out)).astype(dtype)


class Conv2d(Layer):
    def __init__(self, name: str, params: Conv2dParams):
        self.name = name
        self.p = params
        self._cols = None
        self._x_shape = None
        self._grads: Dict[str, np.ndarray] = {}

    @classmethod
    def create(cls, name: str, in_c: int, out_c: int, kernel: int, stride: int, padding: int,
               rng: np.random.Generator, dtype=np.float32) -> 'Conv2d':
        weight = he_normal(rng, (out_c, in_c, kernel, kernel), dtype)
        return cls(name, Conv2dParams(weight=weight, stride=stride, padding=padding))

    def forward(self, x, training=False, cache=True):
        out, cols = F.conv2d_forward_cols(x, self.p)
        if cache:
            self._cols, self._x_shape = cols, x.shape
        return out

    def backward(self, grad):
        grad_x, grad_w, grad_b = F.conv2d_backward_cols(self._cols, self._x_shape, self.p, grad)
        self._grads = {f"{self.name}.weight": grad_w}
        if grad_b is not None:
            self._grads[f"{self.name}.bias"] = grad_b
        return grad_x

    def parameters(self):
        params = {f"{self.name}.weight": self.p.weight}
        if self.p.bias is not None:
            params[f"{self.name}.bias"] = self.p.bias
        return params

    def gradients(self):
        return self._grads


class BatchNorm(Layer):
    def __init__(self, name: str, params: BatchNormParams):
        self.name = name
        self.p = params
        self.update_stats = True
        self._cache = None
        self._grads: Dict[str, np.ndarray] = {}

    def forward(self, x, training=False, cache=True):
        out, bn_cache = F.batchnorm_forward(x, self.p, training, update_stats=self.update_stats and cache)
        if cache:
            self._cache = bn_cache
        return out

    def backward(self, grad):
        grad_x, grad_gamma, grad_beta = F.batchnorm_backward(grad, self.p, self._cache)
        self._grads = {f"{self.name}.gamma": grad_gamma, f"{self.name}.beta": grad_beta}
        return grad_x

    def parameters(self):
        return {f"{self.name}.gamma": self.p.gamma, f"{self.name}.beta": self.p.beta}

    def buffers(self):
        return {f"{self.name}.running_mean": self.p.running_mean,
                f"{self.name}.running_var": self.p.running_var}

    def gradients(self):
        return self._grads


class ReLU(Layer):
    def __init__(self, name: str = "relu"):
        self.name = name
        self._out = None

    def forward(self, x, training=False, cache=True):
        out = F.relu_forward(x)
        if cache:
            self._out = out
        return out

    def backward(self, grad):
        return F.relu_backward(self._out, grad)


class MaxPool(Layer):
    def __init__(self, name: str = "maxpool", kernel: int = 3, stride: int = 2, padding: int = 1):
        self.name = name
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self._cache = None

    def forward(self, x, training=False, cache=True):
        out, pool_cache = F.maxpool_forward(x, self.kernel, self.stride, self.padding)
        if cache:
            self._cache = pool_cache
        return out

    def backward(self, grad):
        return F.maxpool_backward(grad, self._cache)


class VideoShuffle(Layer):
    """Video shuffle (or its inverse) with ``groups`` channel groups; no parameters."""

    def __init__(self, name: str, groups: int, inverse: bool = False):
        self.name = name
        self.groups = groups
        self.inverse = inverse

    def forward(self, x, training=False, cache=True):
        if self.inverse:
            return inverse_shuffle_array(x, self.groups)
        return shuffle_array(x, self.groups)

    def backward(self, grad):
        if self.inverse:
            return shuffle_array(grad, self.groups)
        return inverse_shuffle_array(grad, self.groups)


class TemporalShift(Layer):
    def __init__(self, name: str, spec: ShiftSpec):
        self.name = name
        self.spec = spec

    def forward(self, x, training=False, cache=True):
        return shift_array(x, *self.spec.counts(x.shape[2]))

    def backward(self, grad):
        return shift_backward_array(grad, *self.spec.counts(grad.shape[2]))


class GlobalAvgPool(Layer):
    def __init__(self, name: str = "avgpool"):
        self.name = name
        self._x_shape = None

    def forward(self, x, training=False, cache=True):
        if cache:
            self._x_shape = x.shape
        return F.global_avg_pool(x)

    def backward(self, grad):
        return F.global_avg_pool_backward(grad, self._x_shape)


class Flatten(Layer):
    """(N, ...) -> (N, features)."""

    def __init__(self, name: str = "flatten"):
        self.name = name
        self._x_shape = None

    def forward(self, x, training=False, cache=True):
        if cache:
            self._x_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._x_shape)


class LinearHead(Layer):
    def __init__(self, name: str, params: LinearParams, dropout: float, rng: Optional[np.random.Generator] = None):
        self.name = name
        self.p = params
        self.dropout = dropout
        self.rng = rng
        self._cache = None
        self._grads: Dict[str, np.ndarray] = {}

    def forward(self, x, training=False, cache=True):
        out, head_cache = F.linear_head_forward(x, self.p, self.dropout, training, self.rng)
        if cache:
            self._cache = head_cache
        return out

    def backward(self, grad):
        grad_x, grad_w, grad_b = F.linear_head_backward(grad, self.p, self._cache)
        self._grads = {f"{self.name}.weight": grad_w, f"{self.name}.bias": grad_b}
        return grad_x

    def parameters(self):
        return {f"{self.name}.weight": self.p.weight, f"{self.name}.bias": self.p.bias}

    def gradients(self):
        return self._grads


class Sequential(Layer):
    def __init__(self, name: str, layers: List[Layer]):
        self.name = name
        self.layers = layers

    def forward(self, x, training=False, cache=True):
        for layer in self.layers:
            x = layer.forward(x, training, cache)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self):
        return {k: v for layer in self.layers for k, v in layer.parameters().items()}

    def gradients(self):
        return {k: v for layer in self.layers for k, v in layer.gradients().items()}


class Bottleneck(Layer):
    def __init__(self, name: str, variant: BlockVariant, in_channels: int, width: int, stride: int,
                 groups: int, rng: np.random.Generator, shift_spec: Optional[ShiftSpec] = None,
                 expansion: int = 4, dtype=np.float32, zero_init_last_bn: bool = True):
        self.name = name
        self.variant = variant
        self.in_channels = in_channels
        self.out_channels = width * expansion
        self.width = width
        self.stride = stride
        self.groups = groups
        check_divisibility(name, variant, in_channels, width, self.out_channels, groups)

        conv1 = Conv2d.create(f"{name}.conv1", in_channels, width, 1, 1, 0, rng, dtype)
        conv2 = Conv2d.create(f"{name}.conv2", width, width, 3, stride, 1, rng, dtype)
        conv3 = Conv2d.create(f"{name}.conv3", width, self.out_channels, 1, 1, 0, rng, dtype)
        bn1 = BatchNorm(f"{name}.bn1", BatchNormParams.identity(width, dtype))
        bn2 = BatchNorm(f"{name}.bn2", BatchNormParams.identity(width, dtype))
        bn3 = BatchNorm(f"{name}.bn3", BatchNormParams.identity(self.out_channels, dtype))
        if zero_init_last_bn:
            bn3.p.gamma[:] = 0
        relu1, relu2 = ReLU(f"{name}.relu1"), ReLU(f"{name}.relu2")

        if variant == BlockVariant.COMPACT:
            core = [conv1, bn1, relu1,
                    VideoShuffle(f"{name}.shuffle", groups), conv2,
                    VideoShuffle(f"{name}.unshuffle", groups, inverse=True),
                    bn2, relu2, conv3, bn3]
        else:
            core = [conv1, bn1, relu1, conv2, bn2, relu2, conv3, bn3]
        if variant == BlockVariant.HEADTAIL:
            core = ([VideoShuffle(f"{name}.shuffle", groups)] + core
                    + [VideoShuffle(f"{name}.unshuffle", groups, inverse=True)])
        elif variant == BlockVariant.STANDARD_WITH_SHIFT:
            core = [TemporalShift(f"{name}.shift", shift_spec or ShiftSpec())] + core
        self.branch = Sequential(f"{name}.branch", core)

        self.downsample: Optional[Sequential] = None
        if stride != 1 or in_channels != self.out_channels:
            self.downsample = Sequential(f"{name}.downsample", [
                Conv2d.create(f"{name}.downsample.conv", in_channels, self.out_channels, 1, stride, 0, rng, dtype),
                BatchNorm(f"{name}.downsample.bn", BatchNormParams.identity(self.out_channels, dtype)),
            ])
        self._relu = ReLU(f"{name}.relu_out")

    def forward(self, x, training=False, cache=True):
        branch = self.branch.forward(x, training, cache)
        skip = self.downsample.forward(x, training, cache) if self.downsample else x
        return self._relu.forward(branch + skip, training, cache)

    def backward(self, grad):
        grad = self._relu.backward(grad)
        grad_x = self.branch.backward(grad)
        if self.downsample:
            grad_x = grad_x + self.downsample.backward(grad)
        else:
            grad_x = grad_x + grad
        return grad_x

    def sublayers(self) -> List[Layer]:
        inner = list(self.branch.layers)
        if self.downsample:
            inner += self.downsample.layers
        return inner

    def parameters(self):
        params = self.branch.parameters()
        if self.downsample:
            params.update(self.downsample.parameters())
        return params

    def gradients(self):
        grads = self.branch.gradients()
        if self.downsample:
            grads.update(self.downsample.gradients())
        return grads
