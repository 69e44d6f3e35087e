"""Disparity regression, training loss, and evaluation metrics.

The regression is a soft argmin: costs are negated, softmaxed along the
disparity axis, and the disparity indices are averaged under that
distribution. The result is differentiable and lands strictly inside
[0, D-1], with sub-pixel resolution.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .errors import ConfigurationError, ContractViolation


def soft_argmin(cost_volume):
    """Expected disparity index under softmax(-cost) along axis 0.

    cost_volume: Tensor [D, H, W] -> Tensor [H, W].
    """
    if cost_volume.ndim != 3:
        raise ContractViolation(f"soft_argmin expects [D, H, W], got {cost_volume.shape}")
    d = cost_volume.shape[0]
    prob = ops.softmax(ops.neg(cost_volume), axis=0)
    indices = Tensor(np.arange(d, dtype=cost_volume.dtype).reshape(d, 1, 1))
    return ops.sum_reduce(ops.mul(prob, indices), axis=0)


def l1_loss(pred, gt, mask):
    """Sum over valid pixels of |pred - gt|; subgradient 0 at zero residual.

    ``mask`` is a numpy array (nonzero = valid ground truth).
    """
    gt = ops.as_tensor(gt, like=pred)
    if pred.shape != gt.shape:
        raise ContractViolation(f"l1_loss shape mismatch: {pred.shape} vs {gt.shape}")
    mask = np.asarray(mask)
    if mask.shape != pred.shape:
        raise ContractViolation(f"mask shape {mask.shape} != prediction shape {pred.shape}")
    valid = np.count_nonzero(mask)
    if valid == 0:
        raise ConfigurationError("l1_loss: validity mask is empty")
    weights = Tensor((mask != 0).astype(pred.dtype))
    return ops.sum_reduce(ops.mul(ops.abs_(ops.sub(pred, gt)), weights))


@dataclass
class MetricsReport:
    """Error percentages, mean absolute error, and wall-clock time."""

    err_gt_1px: float  # percent of valid pixels with |error| > 1
    err_gt_3px: float  # percent of valid pixels with |error| > 3
    mae: float  # mean absolute error in pixels
    eval_time_s: float  # wall-clock seconds per image
    valid_pixels: int = 0

    def line(self):
        return (
            f"err_gt_1px={self.err_gt_1px:.4f} err_gt_3px={self.err_gt_3px:.4f} "
            f"mae={self.mae:.6f} time_s={self.eval_time_s:.4f} valid={self.valid_pixels}"
        )


def evaluate(pred, gt, mask, eval_time_s=0.0):
    """Pixel-error metrics over the valid region (plain numpy arrays)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask) != 0
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ContractViolation(
            f"evaluate shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}"
        )
    valid = int(mask.sum())
    if valid == 0:
        raise ConfigurationError("evaluate: validity mask is empty")
    err = np.abs(pred[mask] - gt[mask])
    return MetricsReport(
        err_gt_1px=100.0 * float((err > 1.0).sum()) / valid,
        err_gt_3px=100.0 * float((err > 3.0).sum()) / valid,
        mae=float(err.mean()),
        eval_time_s=eval_time_s,
        valid_pixels=valid,
    )
