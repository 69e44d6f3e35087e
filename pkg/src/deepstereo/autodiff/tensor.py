"""Dense tensors with a reverse-mode gradient tape.

A Tensor wraps a numpy array (float32 by default, float64 for
verification runs). Differentiable operations append a record to the
active Tape; ``backward(loss)`` replays the records in exact reverse
execution order, summing gradient contributions into every tensor that
participates, then clears the tape.

Tensors are immutable after creation except for gradient accumulation;
a Tape must not be shared between concurrently running computations.
"""

from contextlib import contextmanager

import numpy as np

from ..errors import ContractViolation, NumericFault

_FLOAT_DTYPES = (np.float32, np.float64)
_default_dtype = np.float32


def set_default_dtype(dtype):
    """Set the element type used when wrapping non-float data."""
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in _FLOAT_DTYPES:
        raise ContractViolation(f"default dtype must be float32 or float64, got {dtype}")
    _default_dtype = dtype


def get_default_dtype():
    return _default_dtype


@contextmanager
def default_dtype(dtype):
    """Temporarily switch the default element type (used by 64-bit test modes)."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tape:
    """Ordered record of executed operations for one backward pass."""

    def __init__(self):
        self.records = []  # (op_name, output, inputs, grad_fn)

    def __len__(self):
        return len(self.records)

    def clear(self):
        self.records.clear()


_active_tape = Tape()
_grad_enabled = True


def active_tape():
    return _active_tape


@contextmanager
def no_grad():
    """Disable recording; forwards run but contribute nothing to the tape."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled():
    return _grad_enabled


class Tensor:
    """N-dimensional array participating in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            raise ContractViolation("cannot wrap a Tensor in a Tensor; use .data")
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.type not in _FLOAT_DTYPES:
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar; the real implementations live in ops.py
    def __add__(self, other):
        from . import ops

        return ops.add(self, ops.as_tensor(other, like=self))

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, ops.as_tensor(other, like=self))

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, ops.as_tensor(other, like=self))

    def __neg__(self):
        from . import ops

        return ops.neg(self)


def record_op(op_name, out_data, inputs, grad_fn):
    """Wrap an op result, check finiteness, and register the backward rule.

    ``grad_fn(upstream)`` must return one gradient array (or None) per
    input, aligned positionally.
    """
    if not np.all(np.isfinite(out_data)):
        raise NumericFault(f"non-finite values produced by op '{op_name}'")
    requires = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        _active_tape.records.append((op_name, out, tuple(inputs), grad_fn))
    return out


def backward(loss):
    """Populate ``.grad`` of every participating tensor, newest op first.

    The loss must be a scalar produced while the tape was recording. A
    tensor consumed by several operations receives the sum of all path
    contributions. The tape is cleared afterwards, pass or fail.
    """
    if not isinstance(loss, Tensor):
        raise ContractViolation("backward expects a Tensor loss")
    if loss.ndim != 0:
        raise ContractViolation(f"backward requires a scalar loss, got shape {loss.shape}")
    if not _active_tape.records:
        raise ContractViolation("backward called with an empty tape")
    try:
        loss.grad = np.ones_like(loss.data)
        for op_name, out, inputs, grad_fn in reversed(_active_tape.records):
            upstream = out.grad
            if upstream is None:
                continue  # op not on any path to the loss
            grads = grad_fn(upstream)
            for tensor, g in zip(inputs, grads):
                if g is None or not tensor.requires_grad:
                    continue
                tensor.accumulate_grad(g)
    finally:
        _active_tape.clear()
