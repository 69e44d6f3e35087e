"""Finite-difference verification of every backward rule.

Each check builds a small random instance, computes a scalar loss (a
fixed random projection of the op output), runs the tape backward, and
compares every parameter gradient against central finite differences in
64-bit mode. The suite backs both the test suite and the ``grad-check``
CLI command.

Inputs are sampled away from the kinks of relu / max / abs so the
numeric derivative is well defined; the subgradient conventions at the
kinks themselves are covered by exact unit tests instead.
"""

from dataclasses import dataclass, field

import numpy as np

from .aggregation import AggregationConfig, CostAggregator
from .autodiff import Tensor, backward, no_grad, ops, set_default_dtype
from .disparity import l1_loss, soft_argmin

DELTA = 1e-4

PER_OP_TOLERANCE = 1e-4
COMPOSED_TOLERANCE = 1e-3


@dataclass
class GradCheckResult:
    op: str
    module: str
    instances: int
    max_rel_err: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance

    def line(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"{self.op:<22} {status}  max_rel_err={self.max_rel_err:.3e} "
            f"tol={self.tolerance:.0e} instances={self.instances}"
        )


def numeric_gradient(f, x, delta=DELTA):
    """Central finite differences of scalar f w.r.t. every element of x."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + delta
        hi = f()
        flat[i] = keep - delta
        lo = f()
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * delta)
    return grad


def relative_error(analytic, numeric):
    """max over elements of |analytic - numeric| / max(1, |numeric|)."""
    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_instance(params, loss_fn, delta=DELTA):
    """Analytic-vs-numeric comparison for one forward closure.

    params: Tensors (requires_grad) whose elements get perturbed.
    loss_fn: re-runs the forward from the current param contents.
    """
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)

        def value():
            with no_grad():
                return loss_fn().item()

        numeric = numeric_gradient(value, p.data, delta)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _projection_loss(out, rng):
    w = Tensor(rng.normal(size=out.shape))
    return ops.sum_reduce(ops.mul(out, w))


def _away_from_zero(rng, shape, margin=0.1):
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return sign * rng.uniform(margin, 1.5, size=shape)


# --- per-op instance builders ----------------------------------------------


def _instance_conv2d(rng):
    x = Tensor(rng.normal(size=(5, 4, 2)), requires_grad=True)
    k = Tensor(rng.normal(size=(3, 3, 2, 3)), requires_grad=True)
    stride = int(rng.integers(1, 3))
    return [x, k], lambda: _projection_loss(ops.conv2d(x, k, stride), np.random.default_rng(0))


def _instance_conv3d(rng):
    x = Tensor(rng.normal(size=(3, 4, 4, 2)), requires_grad=True)
    k = Tensor(rng.normal(size=(3, 1, 3, 2, 2)), requires_grad=True)
    return [x, k], lambda: _projection_loss(ops.conv3d(x, k, 1), np.random.default_rng(1))


def _instance_conv3d_transpose(rng):
    x = Tensor(rng.normal(size=(2, 2, 3, 2)), requires_grad=True)
    k = Tensor(rng.normal(size=(3, 3, 3, 3, 2)), requires_grad=True)
    out_shape = (4, 3, 5)
    return [x, k], lambda: _projection_loss(
        ops.conv3d_transpose(x, k, out_shape), np.random.default_rng(2)
    )


def _instance_batch_norm(rng):
    x = Tensor(rng.normal(size=(5, 4, 3)), requires_grad=True)
    gamma = Tensor(rng.uniform(0.5, 1.5, size=3), requires_grad=True)
    beta = Tensor(rng.normal(size=3), requires_grad=True)

    def loss_fn():
        out = ops.batch_norm(x, gamma, beta, None, training=True)
        return _projection_loss(out, np.random.default_rng(3))

    return [x, gamma, beta], loss_fn


def _instance_relu(rng):
    x = Tensor(_away_from_zero(rng, (6, 5)), requires_grad=True)
    return [x], lambda: _projection_loss(ops.relu(x), np.random.default_rng(4))


def _instance_softmax(rng):
    x = Tensor(rng.normal(size=(4, 5)) * 2, requires_grad=True)
    return [x], lambda: _projection_loss(ops.softmax(x, axis=1), np.random.default_rng(5))


def _instance_mul_broadcast(rng):
    a = Tensor(rng.normal(size=(3, 4, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 1)), requires_grad=True)
    return [a, b], lambda: _projection_loss(ops.mul(a, b), np.random.default_rng(6))


def _instance_add_broadcast(rng):
    a = Tensor(rng.normal(size=(3, 4, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=(2,)), requires_grad=True)
    return [a, b], lambda: _projection_loss(ops.add(a, b), np.random.default_rng(7))


def _instance_max_reduce(rng):
    # spread the values so no two candidates sit within the FD step of a tie
    base = rng.normal(size=(4, 6)) * 3
    base += rng.permuted(np.arange(base.size).reshape(base.shape) * 0.01, axis=1)
    x = Tensor(base, requires_grad=True)

    def loss_fn():
        values, _ = ops.max_reduce(x, axis=1)
        return _projection_loss(values, np.random.default_rng(8))

    return [x], loss_fn


def _instance_sum_reduce(rng):
    x = Tensor(rng.normal(size=(3, 4, 2)), requires_grad=True)
    return [x], lambda: _projection_loss(ops.sum_reduce(x, axis=1), np.random.default_rng(9))


def _instance_soft_argmin(rng):
    c = Tensor(rng.normal(size=(5, 3, 4)), requires_grad=True)
    return [c], lambda: _projection_loss(soft_argmin(c), np.random.default_rng(10))


def _instance_l1_loss(rng):
    pred = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    gt = Tensor(pred.data + _away_from_zero(rng, (4, 4), margin=0.05))
    mask = np.ones((4, 4))
    return [pred], lambda: l1_loss(pred, gt, mask)


def _instance_aggregate(rng):
    config = AggregationConfig(num_proposals=2, guidance_channels=3, image_channels=1)
    aggregator = CostAggregator(config, np.random.default_rng(int(rng.integers(1 << 30))), dtype=np.float64)
    c0 = Tensor(rng.normal(size=(3, 4, 4)), requires_grad=True)
    reference = Tensor(rng.random((4, 4, 1)))
    params = [c0] + list(aggregator.named_parameters("agg").values())
    # jitter every parameter: fresh zero biases park relu pre-activations and
    # fusion margins exactly on their kinks, where finite differences see the
    # two-sided average instead of the subgradient
    for p in params[1:]:
        p.data = p.data + rng.normal(0.0, 0.2, size=p.shape)

    def loss_fn():
        out = aggregator.aggregate(c0, reference)
        return _projection_loss(out, np.random.default_rng(11))

    return params, loss_fn


_CHECKS = [
    # (op name, module tag, builder, tolerance)
    ("conv2d", "tensor-autodiff", _instance_conv2d, PER_OP_TOLERANCE),
    ("conv3d", "tensor-autodiff", _instance_conv3d, PER_OP_TOLERANCE),
    ("conv3d_transpose", "tensor-autodiff", _instance_conv3d_transpose, PER_OP_TOLERANCE),
    ("batch_norm", "tensor-autodiff", _instance_batch_norm, PER_OP_TOLERANCE),
    ("relu", "tensor-autodiff", _instance_relu, PER_OP_TOLERANCE),
    ("softmax", "tensor-autodiff", _instance_softmax, PER_OP_TOLERANCE),
    ("mul_broadcast", "tensor-autodiff", _instance_mul_broadcast, PER_OP_TOLERANCE),
    ("add_broadcast", "tensor-autodiff", _instance_add_broadcast, PER_OP_TOLERANCE),
    ("max_reduce", "tensor-autodiff", _instance_max_reduce, PER_OP_TOLERANCE),
    ("sum_reduce", "tensor-autodiff", _instance_sum_reduce, PER_OP_TOLERANCE),
    ("soft_argmin", "disparity-head", _instance_soft_argmin, PER_OP_TOLERANCE),
    ("l1_loss", "disparity-head", _instance_l1_loss, PER_OP_TOLERANCE),
    ("aggregate_composed", "cost-aggregation", _instance_aggregate, COMPOSED_TOLERANCE),
]


def available_modules():
    return sorted({module for _, module, _, _ in _CHECKS})


def run_gradient_checks(module=None, instances=20, seed=20240501):
    """Run the suite in 64-bit mode; returns a list of GradCheckResult."""
    set_default_dtype(np.float64)
    try:
        results = []
        for op_index, (op, mod, builder, tol) in enumerate(_CHECKS):
            if module is not None and mod != module:
                continue
            worst = 0.0
            for i in range(instances):
                rng = np.random.default_rng(seed + 7919 * i + 13 * op_index)
                params, loss_fn = builder(rng)
                worst = max(worst, check_instance(params, loss_fn))
            results.append(GradCheckResult(op, mod, instances, worst, tol))
        return results
    finally:
        set_default_dtype(np.float32)
