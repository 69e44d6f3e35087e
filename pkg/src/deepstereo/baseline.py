"""Non-learned stereo pipeline and the brute-force test oracles.

The census + box-filter + winner-take-all chain provides a reference
method for the comparison table, and the naive convolution oracle is the
independent arbiter the tape engine is tested against: plain nested
loops, 64-bit accumulation, explicit bounds checks, no shared code with
the fast implementations.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractViolation


@dataclass
class BaselineConfig:
    census_window: int = 5
    aggregation_window: int = 7
    max_disparity: int = 16

    def validate(self):
        for name in ("census_window", "aggregation_window"):
            value = getattr(self, name)
            if value < 1 or value % 2 == 0:
                raise ConfigurationError(f"{name} must be odd and >= 1, got {value}")
        if self.max_disparity < 1:
            raise ConfigurationError(f"max_disparity must be >= 1, got {self.max_disparity}")


def census_transform(image, window):
    """Bit per neighbor: 1 where the neighbor is brighter than the center.

    Out-of-frame neighbors count as intensity 0. Returns a bool array of
    shape [H, W, window*window - 1].
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    r = window // 2
    if r == 0:
        return np.zeros((h, w, 0), dtype=bool)
    padded = np.pad(image, r)
    bits = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            neighbor = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            bits.append(neighbor > image)
    return np.stack(bits, axis=-1)


def census_cost(left, right, config):
    """Hamming-distance cost volume C[d, h, w] between census descriptors.

    Correspondences that fall outside the right image receive the maximal
    cost (every bit mismatched).
    """
    config.validate()
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.shape != right.shape or left.ndim != 2:
        raise ContractViolation(f"census_cost expects equal 2-D images, got {left.shape}/{right.shape}")
    h, w = left.shape
    nbits = config.census_window**2 - 1
    cl = census_transform(left, config.census_window)
    cr = census_transform(right, config.census_window)
    cost = np.full((config.max_disparity, h, w), float(nbits), dtype=np.float64)
    for d in range(config.max_disparity):
        if d >= w:
            break
        diff = cl[:, d:, :] != cr[:, : w - d, :]
        cost[d, :, d:] = diff.sum(axis=-1)
    return cost


def box_aggregate(cost, window):
    """Per-disparity 2-D mean filter with in-frame renormalization.

    Border windows average only the pixels that exist, so edges are not
    biased toward zero.
    """
    if window < 1 or window % 2 == 0:
        raise ConfigurationError(f"aggregation window must be odd and >= 1, got {window}")
    cost = np.asarray(cost, dtype=np.float64)
    d, h, w = cost.shape
    r = window // 2
    sums = np.zeros_like(cost)
    counts = np.zeros((h, w), dtype=np.float64)
    ones = np.ones((h, w), dtype=np.float64)
    for dy in range(-r, r + 1):
        ys = slice(max(0, dy), min(h, h + dy))
        yd = slice(max(0, -dy), min(h, h - dy))
        for dx in range(-r, r + 1):
            xs = slice(max(0, dx), min(w, w + dx))
            xd = slice(max(0, -dx), min(w, w - dx))
            sums[:, yd, xd] += cost[:, ys, xs]
            counts[yd, xd] += ones[ys, xs]
    return sums / counts


def hard_wta(cost):
    """Per-pixel argmin over disparity; ties break to the lowest index."""
    cost = np.asarray(cost)
    if cost.ndim != 3:
        raise ContractViolation(f"hard_wta expects a [D, H, W] volume, got {cost.shape}")
    return np.argmin(cost, axis=0).astype(np.float64)


def match_stereo(left, right, config):
    """census -> box aggregation -> WTA, returning the disparity map."""
    cost = census_cost(left, right, config)
    aggregated = box_aggregate(cost, config.aggregation_window)
    return hard_wta(aggregated)


# ---------------------------------------------------------------------------
# naive convolution oracle
# ---------------------------------------------------------------------------

_ORACLE_MAX_EXTENT = 9


def naive_conv_oracle(x, kernel, stride, transpose=False, output_shape=None):
    """Direct nested-loop convolution for cross-checking the fast paths.

    Cross-correlation with zero padding of kernel_extent // 2 per axis.
    ``transpose=False``: x [*spatial, Cin], kernel [*kspatial, Cin, Cout].
    ``transpose=True``: the adjoint scatter; kernel [*kspatial, Cout, Cin]
    and ``output_shape`` gives the output spatial extents.

    Deliberately slow and obvious; spatial extents are capped so tests
    cannot accidentally lean on it at scale.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    nsp = kernel.ndim - 2
    if nsp not in (2, 3):
        raise ContractViolation(f"oracle supports 2 or 3 spatial dims, kernel has {kernel.ndim} axes")
    if x.ndim != nsp + 1:
        raise ContractViolation(f"oracle input must have {nsp + 1} axes, got {x.ndim}")
    if isinstance(stride, int):
        stride = (stride,) * nsp
    kspatial = kernel.shape[:nsp]
    if any(k % 2 == 0 for k in kspatial):
        raise ContractViolation(f"oracle kernel extents must be odd, got {kspatial}")
    guard = x.shape[:nsp] + (output_shape if transpose and output_shape else ())
    if any(e > _ORACLE_MAX_EXTENT for e in guard):
        raise ConfigurationError(
            f"oracle extents capped at {_ORACLE_MAX_EXTENT}, got {tuple(guard)}"
        )
    pads = tuple(k // 2 for k in kspatial)
    if not transpose:
        return _oracle_gather(x, kernel, stride, kspatial, pads)
    if output_shape is None:
        raise ContractViolation("transpose oracle needs output_shape")
    return _oracle_scatter(x, kernel, stride, kspatial, pads, tuple(output_shape))


def _oracle_gather(x, kernel, stride, kspatial, pads):
    in_spatial = x.shape[:-1]
    cin, cout = kernel.shape[-2], kernel.shape[-1]
    if x.shape[-1] != cin:
        raise ContractViolation("oracle channel mismatch")
    out_spatial = tuple(-(-e // s) for e, s in zip(in_spatial, stride))
    out = np.zeros(out_spatial + (cout,), dtype=np.float64)
    for opos in np.ndindex(*out_spatial):
        for kpos in np.ndindex(*kspatial):
            ipos = tuple(o * s + k - p for o, s, k, p in zip(opos, stride, kpos, pads))
            if any(i < 0 or i >= e for i, e in zip(ipos, in_spatial)):
                continue
            for co in range(cout):
                acc = 0.0
                for ci in range(cin):
                    acc += x[ipos + (ci,)] * kernel[kpos + (ci, co)]
                out[opos + (co,)] += acc
    return out


def _oracle_scatter(x, kernel, stride, kspatial, pads, out_spatial):
    in_spatial = x.shape[:-1]
    cout, cin = kernel.shape[-2], kernel.shape[-1]
    if x.shape[-1] != cin:
        raise ContractViolation("oracle channel mismatch")
    for e, s, i in zip(out_spatial, stride, in_spatial):
        if -(-e // s) != i:
            raise ContractViolation(
                f"oracle output extent {e} with stride {s} inconsistent with input extent {i}"
            )
    out = np.zeros(tuple(out_spatial) + (cout,), dtype=np.float64)
    for ipos in np.ndindex(*in_spatial):
        for kpos in np.ndindex(*kspatial):
            tpos = tuple(i * s + k - p for i, s, k, p in zip(ipos, stride, kpos, pads))
            if any(t < 0 or t >= e for t, e in zip(tpos, out_spatial)):
                continue
            for co in range(cout):
                acc = 0.0
                for ci in range(cin):
                    acc += x[ipos + (ci,)] * kernel[kpos + (co, ci)]
                out[tpos + (co,)] += acc
    return out
