"""Shared N-dimensional convolution arithmetic (channels-last, zero padding).

Three linear maps cover every convolution variant in the package:

    conv_forward      gather:  out[o, co] = sum_{k, ci} x[o*s + k - p, ci] * K[k, ci, co]
    conv_grad_input   scatter: the adjoint of conv_forward w.r.t. x
    conv_grad_kernel  the adjoint of conv_forward w.r.t. K

where o ranges over output positions, k over kernel offsets, s is the
per-axis stride and p = kernel_extent // 2 ("same" padding for odd
kernels: a stride-1 output has the input's spatial extents, a stride-s
output has ceil(extent / s)).

Transposed convolution is conv_grad_input applied to its input, so the
upsampling path and the convolution backward pass share one code path.

All functions take and return plain numpy arrays; reduction order within
each output element is fixed, keeping results bit-reproducible.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractViolation

# einsum specs per number of spatial dims; windows carry the kernel axes last
_FWD_SPEC = {2: "hwcij,ijcf->hwf", 3: "dhwcijk,ijkcf->dhwf"}
_GK_SPEC = {2: "hwcij,hwf->ijcf", 3: "dhwcijk,dhwf->ijkcf"}


def _normalize_stride(stride, nsp):
    if isinstance(stride, int):
        stride = (stride,) * nsp
    stride = tuple(int(s) for s in stride)
    if len(stride) != nsp or any(s < 1 for s in stride):
        raise ContractViolation(f"stride {stride} invalid for {nsp} spatial axes")
    return stride


def _check_kernel(kernel, nsp):
    if kernel.ndim != nsp + 2:
        raise ContractViolation(
            f"kernel must have {nsp + 2} axes (spatial + in/out channels), got {kernel.ndim}"
        )
    kspatial = kernel.shape[:nsp]
    if any(k % 2 == 0 for k in kspatial):
        raise ContractViolation(f"kernel spatial extents must be odd, got {kspatial}")
    return kspatial


def _windows(x, kspatial, stride):
    """Strided sliding windows of the zero-padded input.

    Returns an array of shape [*out_spatial, C, *kspatial] (a copy, laid out
    contiguously so the einsum contraction runs at full speed).
    """
    nsp = len(kspatial)
    pads = [(k // 2, k // 2) for k in kspatial] + [(0, 0)]
    xp = np.pad(x, pads)
    win = sliding_window_view(xp, kspatial, axis=tuple(range(nsp)))
    win = win[tuple(slice(None, None, s) for s in stride)]
    return np.ascontiguousarray(win)


def out_extent(in_extent, stride):
    return -(-in_extent // stride)  # ceil division


def conv_forward(x, kernel, stride):
    """Cross-correlation of x [*spatial, Cin] with kernel [*kspatial, Cin, Cout]."""
    nsp = kernel.ndim - 2
    stride = _normalize_stride(stride, nsp)
    kspatial = _check_kernel(kernel, nsp)
    if x.ndim != nsp + 1:
        raise ContractViolation(f"input must have {nsp + 1} axes, got {x.ndim}")
    if x.shape[-1] != kernel.shape[-2]:
        raise ContractViolation(
            f"input channels {x.shape[-1]} != kernel input channels {kernel.shape[-2]}"
        )
    win = _windows(x, kspatial, stride)
    return np.einsum(_FWD_SPEC[nsp], win, kernel, optimize=False)


def conv_grad_kernel(x, grad_out, kshape, stride):
    """Gradient of conv_forward w.r.t. the kernel."""
    nsp = len(kshape) - 2
    stride = _normalize_stride(stride, nsp)
    win = _windows(x, kshape[:nsp], stride)
    return np.einsum(_GK_SPEC[nsp], win, grad_out, optimize=False)


def conv_grad_input(grad_out, kernel, stride, in_spatial):
    """Gradient of conv_forward w.r.t. the input (a strided scatter).

    `in_spatial` names the spatial extents of the tensor being
    reconstructed; each must satisfy ceil(extent / stride) == grad extent.
    """
    nsp = kernel.ndim - 2
    stride = _normalize_stride(stride, nsp)
    kspatial = _check_kernel(kernel, nsp)
    in_spatial = tuple(int(e) for e in in_spatial)
    if len(in_spatial) != nsp:
        raise ContractViolation(f"in_spatial must have {nsp} extents, got {in_spatial}")
    for ext, s, g in zip(in_spatial, stride, grad_out.shape[:nsp]):
        if out_extent(ext, s) != g:
            raise ContractViolation(
                f"spatial extent {ext} with stride {s} yields {out_extent(ext, s)} "
                f"positions, but gradient has {g}"
            )
    cin = kernel.shape[-2]
    pads = tuple(k // 2 for k in kspatial)
    padded = tuple(e + 2 * p for e, p in zip(in_spatial, pads))
    acc = np.zeros(padded + (cin,), dtype=grad_out.dtype)
    nout = grad_out.shape[:nsp]
    # One strided slice-add per kernel offset; offsets are visited in a fixed
    # order so accumulation is deterministic.
    for offsets in np.ndindex(*kspatial):
        tap = kernel[offsets]  # [Cin, Cout]
        contrib = np.einsum("...f,cf->...c", grad_out, tap, optimize=False)
        sl = tuple(
            slice(off, off + s * n, s) for off, s, n in zip(offsets, stride, nout)
        )
        acc[sl] += contrib
    unpad = tuple(slice(p, p + e) for p, e in zip(pads, in_spatial))
    return acc[unpad]
