"""Differentiable operations over Tensors.

Broadcasting follows trailing-axis alignment (an absent axis or an axis
of extent 1 stretches). Reductions and scatters keep a fixed order per
output element, so repeated runs are bit-identical.
"""

import numpy as np

from ..errors import ConfigurationError, ContractViolation
from . import convnd
from .tensor import Tensor, record_op


def as_tensor(value, like=None, requires_grad=False):
    """Wrap plain data as a constant Tensor; pass Tensors through."""
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else None
    return Tensor(value, requires_grad=requires_grad, dtype=dtype)


def _unbroadcast(g, shape):
    """Sum g down to ``shape`` (inverse of trailing-axis broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (got, want) in enumerate(zip(g.shape, shape)) if want == 1 and got != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_axis(axis, ndim, op_name):
    if not -ndim <= axis < ndim:
        raise ContractViolation(f"{op_name}: axis {axis} out of range for {ndim} axes")
    return axis % ndim


# ---------------------------------------------------------------------------
# elementwise / broadcast
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record_op("add", a.data + b.data, (a, b), grad_fn)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record_op("sub", a.data - b.data, (a, b), grad_fn)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b, like=a)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record_op("mul", a.data * b.data, (a, b), grad_fn)


def neg(a):
    return record_op("neg", -a.data, (a,), lambda g: (-g,))


def scale(a, factor):
    factor = float(factor)
    return record_op("scale", a.data * factor, (a,), lambda g: (g * factor,))


def relu(a):
    mask = a.data > 0

    def grad_fn(g):
        return (g * mask,)

    return record_op("relu", np.where(mask, a.data, 0), (a,), grad_fn)


def abs_(a):
    sign = np.sign(a.data)  # subgradient 0 at the kink

    def grad_fn(g):
        return (g * sign,)

    return record_op("abs", np.abs(a.data), (a,), grad_fn)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_reduce(a, axis=None, keepdims=False):
    if axis is not None:
        axis = _check_axis(axis, a.ndim, "sum_reduce")
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record_op("sum_reduce", out, (a,), grad_fn)


def mean_reduce(a, axis=None, keepdims=False):
    count = a.size if axis is None else a.shape[_check_axis(axis, a.ndim, "mean_reduce")]
    return scale(sum_reduce(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max_reduce(a, axis):
    """Maximum along ``axis``; ties break to the lowest index.

    Returns (values, argmax) where argmax is a plain integer array. The
    gradient is routed only to the winning element of each slice.
    """
    axis = _check_axis(axis, a.ndim, "max_reduce")
    idx = np.argmax(a.data, axis=axis)
    values = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def grad_fn(g):
        gx = np.zeros_like(a.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return record_op("max_reduce", values, (a,), grad_fn), idx


def softmax(a, axis):
    """Shift-invariant softmax (computed with per-slice max subtraction)."""
    axis = _check_axis(axis, a.ndim, "softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return record_op("softmax", y, (a,), grad_fn)


# ---------------------------------------------------------------------------
# shape / indexing
# ---------------------------------------------------------------------------


def reshape(a, shape):
    shape = tuple(shape)

    def grad_fn(g):
        return (g.reshape(a.shape),)

    return record_op("reshape", a.data.reshape(shape), (a,), grad_fn)


def squeeze(a, axis):
    axis = _check_axis(axis, a.ndim, "squeeze")
    if a.shape[axis] != 1:
        raise ContractViolation(f"squeeze: axis {axis} has extent {a.shape[axis]}")

    def grad_fn(g):
        return (np.expand_dims(g, axis),)

    return record_op("squeeze", a.data.squeeze(axis), (a,), grad_fn)


def concat(tensors, axis):
    tensors = tuple(tensors)
    if not tensors:
        raise ContractViolation("concat needs at least one tensor")
    axis = _check_axis(axis, tensors[0].ndim, "concat")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return record_op("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, grad_fn)


def stack(tensors, axis=0):
    tensors = tuple(tensors)
    if not tensors:
        raise ContractViolation("stack needs at least one tensor")
    axis = _check_axis(axis, tensors[0].ndim + 1, "stack")

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return record_op("stack", np.stack([t.data for t in tensors], axis=axis), tensors, grad_fn)


def take(a, indices, axis):
    """Gather along one axis with integer indices (used by the shift op)."""
    axis = _check_axis(axis, a.ndim, "take")
    indices = np.asarray(indices)
    if indices.ndim != 1:
        raise ContractViolation("take expects a 1-D index array")

    def grad_fn(g):
        gx = np.zeros_like(a.data)
        gx_m = np.moveaxis(gx, axis, 0)
        np.add.at(gx_m, indices, np.moveaxis(g, axis, 0))
        return (gx,)

    return record_op("take", np.take(a.data, indices, axis=axis), (a,), grad_fn)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def conv2d(x, kernel, stride=1):
    """2-D cross-correlation, zero "same" padding, channels last.

    x: [H, W, Cin], kernel: [kh, kw, Cin, Cout] with odd kh/kw; output
    spatial extents are ceil(extent / stride).
    """
    return _conv(x, kernel, stride, nsp=2, name="conv2d")


def conv3d(x, kernel, stride=1):
    """3-D cross-correlation, zero "same" padding, channels last.

    x: [D, H, W, Cin], kernel: [kd, kh, kw, Cin, Cout] with odd extents;
    stride may be an int or a per-axis triple.
    """
    return _conv(x, kernel, stride, nsp=3, name="conv3d")


def _conv(x, kernel, stride, nsp, name):
    out = convnd.conv_forward(x.data, kernel.data, stride)
    in_spatial = x.shape[:nsp]
    kshape = kernel.shape

    def grad_fn(g):
        gx = convnd.conv_grad_input(g, kernel.data, stride, in_spatial)
        gk = convnd.conv_grad_kernel(x.data, g, kshape, stride)
        return gx, gk

    return record_op(name, out, (x, kernel), grad_fn)


def conv3d_transpose(x, kernel, output_shape, stride=2):
    """Stride-s upsampling as the adjoint of conv3d.

    x: [D, H, W, Cin], kernel: [kd, kh, kw, Cout, Cin] — the kernel of the
    downsampling convolution this op inverts, so the forward pass here is
    exactly that convolution's backward-input pass. ``output_shape`` gives
    the three output spatial extents (resolving the odd/even ambiguity);
    each must satisfy ceil(extent / stride) == input extent.
    """
    output_shape = tuple(int(e) for e in output_shape)
    if len(output_shape) != 3:
        raise ContractViolation(f"output_shape must have 3 spatial extents, got {output_shape}")
    if x.shape[-1] != kernel.shape[-1]:
        raise ContractViolation(
            f"input channels {x.shape[-1]} != kernel trailing channels {kernel.shape[-1]}"
        )
    out = convnd.conv_grad_input(x.data, kernel.data, stride, output_shape)
    kshape = kernel.shape

    def grad_fn(g):
        gx = convnd.conv_forward(g, kernel.data, stride)
        gk = convnd.conv_grad_kernel(g, x.data, kshape, stride)
        return gx, gk

    return record_op("conv3d_transpose", out, (x, kernel), grad_fn)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

BN_EPS = 1e-5
BN_MOMENTUM = 0.9  # fraction of the old running statistic kept per update


class BatchNormState:
    """Per-channel running mean/variance, populated on the first train step."""

    __slots__ = ("mean", "var")

    def __init__(self):
        self.mean = None
        self.var = None

    @property
    def initialized(self):
        return self.mean is not None


def batch_norm(x, gamma, beta, state, training, eps=BN_EPS, momentum=BN_MOMENTUM):
    """Normalize per channel over all non-channel positions.

    Train mode uses the current sample's statistics and folds them into the
    running state; eval mode reads the running state and fails if it was
    never populated.
    """
    channels = x.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ContractViolation(
            f"batch_norm: gamma/beta must have shape ({channels},), got {gamma.shape}/{beta.shape}"
        )
    axes = tuple(range(x.ndim - 1))
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if state is not None:
            prev_mean = state.mean if state.initialized else np.zeros_like(mu)
            prev_var = state.var if state.initialized else np.ones_like(var)
            state.mean = momentum * prev_mean + (1.0 - momentum) * mu
            state.var = momentum * prev_var + (1.0 - momentum) * var
    else:
        if state is None or not state.initialized:
            raise ConfigurationError("batch_norm eval mode with uninitialized running stats")
        mu = state.mean.astype(x.data.dtype)
        var = state.var.astype(x.data.dtype)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data
    count = x.size // channels

    def grad_fn(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data
        if training:
            dvar = (dxhat * (x.data - mu)).sum(axis=axes) * (-0.5) * inv**3
            dmu = (-dxhat * inv).sum(axis=axes)
            dx = dxhat * inv + (2.0 / count) * dvar * (x.data - mu) + dmu / count
        else:
            dx = dxhat * inv
        return dx, dgamma, dbeta

    return record_op("batch_norm", out, (x, gamma, beta), grad_fn)
