"""Parameterized building blocks: convolution layers and batch norm.

Each layer owns its Tensors, exposes them through ``named_parameters``
(flat dict, checkpoint-ready names), and is initialized from an explicit
numpy Generator: fan-in scaled normal kernels, zero biases, unit gains.
"""

import math

import numpy as np

from .autodiff import Tensor, ops


def _he_kernel(rng, kshape, fan_in, dtype):
    std = math.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=kshape).astype(dtype), requires_grad=True)


class Conv2d:
    """2-D convolution with bias; kernel [kh, kw, Cin, Cout]."""

    def __init__(self, rng, kh, kw, cin, cout, stride=1, dtype=np.float32):
        self.stride = stride
        self.kernel = _he_kernel(rng, (kh, kw, cin, cout), kh * kw * cin, dtype)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ops.add(ops.conv2d(x, self.kernel, self.stride), self.bias)

    def named_parameters(self, prefix):
        return {f"{prefix}.kernel": self.kernel, f"{prefix}.bias": self.bias}


class Conv3d:
    """3-D convolution with bias; kernel [kd, kh, kw, Cin, Cout]."""

    def __init__(self, rng, kshape, cin, cout, stride=1, dtype=np.float32):
        kd, kh, kw = kshape
        self.stride = stride
        self.kernel = _he_kernel(rng, (kd, kh, kw, cin, cout), kd * kh * kw * cin, dtype)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return ops.add(ops.conv3d(x, self.kernel, self.stride), self.bias)

    def named_parameters(self, prefix):
        return {f"{prefix}.kernel": self.kernel, f"{prefix}.bias": self.bias}


class ConvTranspose3d:
    """Stride-2 3-D upsampling; kernel [kd, kh, kw, Cout, Cin]."""

    def __init__(self, rng, cin, cout, stride=2, dtype=np.float32):
        self.stride = stride
        self.kernel = _he_kernel(rng, (3, 3, 3, cout, cin), 27 * cin, dtype)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x, output_shape):
        out = ops.conv3d_transpose(x, self.kernel, output_shape, self.stride)
        return ops.add(out, self.bias)

    def named_parameters(self, prefix):
        return {f"{prefix}.kernel": self.kernel, f"{prefix}.bias": self.bias}


class BatchNorm:
    """Per-channel normalization with trainable gain/shift and running stats."""

    def __init__(self, channels, dtype=np.float32):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.state = ops.BatchNormState()
        self.training = True

    def __call__(self, x):
        return ops.batch_norm(x, self.gamma, self.beta, self.state, self.training)

    def named_parameters(self, prefix):
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}

    def named_state(self, prefix):
        if not self.state.initialized:
            return {}
        return {
            f"{prefix}.running_mean": self.state.mean,
            f"{prefix}.running_var": self.state.var,
        }

    def load_state(self, mean, var):
        self.state.mean = np.asarray(mean)
        self.state.var = np.asarray(var)
