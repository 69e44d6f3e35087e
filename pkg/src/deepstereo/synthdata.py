"""Random-dot stereogram generation with exact dense ground truth.

A scene is a stack of textured layers: layer 0 fills the frame
(background) and each further layer is a rectangle floating in front,
at a disparity larger than everything behind it. The left image shows
the composed texture; the right image is built by warping every left
pixel to column w - d with z-buffer resolution, so nearer layers occlude
farther ones in both views. The validity mask marks left pixels whose
correspondence is in frame and unoccluded; for integer disparities those
pixels match their counterpart exactly, giving tests a noise-free oracle.
"""

import os
import re
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, ContractViolation, InputOutputError
from .fileio import read_pfm, read_pgm, write_pfm, write_pgm


@dataclass
class SceneSpec:
    # layer_disparities entries: a number (fronto-parallel plane) or a
    # (left edge, right edge) pair for a sub-pixel linear ramp
    height: int = 32
    width: int = 32
    max_disparity: int = 8
    num_layers: int = 3  # background plus num_layers-1 rectangles
    layer_disparities: list = None  # per layer; None -> evenly spread integers
    dot_density: float = 0.5
    texture: str = "dots"  # "dots" (binary) or "noise" (smoothed)
    occlusion_fill: str = "noise"  # or "nearest"
    seed: int = 0

    def validate(self):
        if self.height < 4 or self.width < 4:
            raise ConfigurationError(f"scene extents too small: {self.height}x{self.width}")
        if self.max_disparity < 1:
            raise ConfigurationError(f"max_disparity must be >= 1, got {self.max_disparity}")
        if self.num_layers < 1:
            raise ConfigurationError(f"num_layers must be >= 1, got {self.num_layers}")
        if not 0.0 < self.dot_density <= 1.0:
            raise ConfigurationError(f"dot_density must be in (0, 1], got {self.dot_density}")
        if self.texture not in ("dots", "noise"):
            raise ConfigurationError(f"texture must be 'dots' or 'noise', got {self.texture!r}")
        if self.occlusion_fill not in ("noise", "nearest"):
            raise ConfigurationError(
                f"occlusion_fill must be 'noise' or 'nearest', got {self.occlusion_fill!r}"
            )
        for d in self.resolved_disparities():
            lo, hi = (d, d) if np.isscalar(d) else (min(d), max(d))
            if lo < 0 or hi > self.max_disparity - 1:
                raise ConfigurationError(
                    f"layer_disparities: disparity {d} outside [0, {self.max_disparity - 1}]"
                )

    def resolved_disparities(self):
        """Per-layer disparity values, nearest last."""
        if self.layer_disparities is not None:
            if len(self.layer_disparities) != self.num_layers:
                raise ConfigurationError(
                    f"layer_disparities has {len(self.layer_disparities)} entries "
                    f"for {self.num_layers} layers"
                )
            return [tuple(d) if isinstance(d, (tuple, list)) else d for d in self.layer_disparities]
        top = self.max_disparity - 1
        return [round(i * top / self.num_layers) for i in range(self.num_layers)]


@dataclass
class StereoSample:
    left: np.ndarray  # [H, W, 1] in [0, 1]
    right: np.ndarray  # [H, W, 1] in [0, 1]
    gt_disparity: np.ndarray  # [H, W] pixels
    mask: np.ndarray  # [H, W] bool, True = valid correspondence


def _texture(rng, shape, spec):
    if spec.texture == "dots":
        return (rng.random(shape) < spec.dot_density).astype(np.float32)
    noise = rng.random((shape[0] + 2, shape[1] + 2)).astype(np.float32)
    smooth = sum(
        noise[1 + dy : 1 + dy + shape[0], 1 + dx : 1 + dx + shape[1]]
        for dy in (-1, 0, 1)
        for dx in (-1, 0, 1)
    ) / 9.0
    return smooth


def _disparity_field(value, h, w):
    """Constant plane or a left-to-right linear ramp across the frame."""
    if np.isscalar(value):
        return np.full((h, w), float(value), dtype=np.float64)
    lo, hi = value
    ramp = np.linspace(float(lo), float(hi), w, dtype=np.float64)
    return np.broadcast_to(ramp, (h, w)).copy()


def generate(spec):
    """Deterministically render one StereoSample from the scene description."""
    spec.validate()
    h, w = spec.height, spec.width
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    disparities = spec.resolved_disparities()

    # compose the left view, nearest layer last so it wins
    left = _texture(rng, (h, w), spec)
    gt = _disparity_field(disparities[0], h, w)
    order = sorted(
        range(1, spec.num_layers),
        key=lambda i: np.mean(_disparity_field(disparities[i], h, w)),
    )
    for i in order:
        rh = int(rng.integers(h // 4, max(h // 4 + 1, 2 * h // 3)))
        rw = int(rng.integers(w // 4, max(w // 4 + 1, 2 * w // 3)))
        ry = int(rng.integers(0, h - rh + 1))
        rx = int(rng.integers(0, w - rw + 1))
        left[ry : ry + rh, rx : rx + rw] = _texture(rng, (rh, rw), spec)
        gt[ry : ry + rh, rx : rx + rw] = _disparity_field(disparities[i], h, w)[
            ry : ry + rh, rx : rx + rw
        ]

    subpixel = any(not np.isscalar(d) or float(d) != round(float(d)) for d in disparities)
    right, mask = _warp_right(left, gt, rng, spec, subpixel)
    return StereoSample(
        left=left[:, :, None].astype(np.float32),
        right=right[:, :, None].astype(np.float32),
        gt_disparity=gt.astype(np.float32),
        mask=mask,
    )


def _warp_right(left, gt, rng, spec, subpixel):
    """Forward-warp the left view; nearer pixels win the z-buffer."""
    h, w = left.shape
    right = np.zeros((h, w), dtype=np.float32)
    covered = np.zeros((h, w), dtype=bool)
    mask = np.zeros((h, w), dtype=bool)
    if subpixel:
        targets = np.round(np.arange(w)[None, :] - gt).astype(np.int64)
    else:
        targets = (np.arange(w)[None, :] - np.round(gt)).astype(np.int64)
    for y in range(h):
        winner = np.full(w, -1, dtype=np.int64)  # source column per target
        depth = np.full(w, -np.inf)
        for x in range(w):
            t = targets[y, x]
            if t < 0 or t >= w:
                continue
            if gt[y, x] > depth[t]:
                depth[t] = gt[y, x]
                winner[t] = x
        for t in range(w):
            x = winner[t]
            if x < 0:
                continue
            covered[y, t] = True
            if subpixel:
                # sample the left view at the exact sub-pixel source position
                src = t + gt[y, x]
                x0 = int(np.floor(src))
                frac = src - x0
                x0 = min(max(x0, 0), w - 1)
                x1 = min(x0 + 1, w - 1)
                right[y, t] = (1 - frac) * left[y, x0] + frac * left[y, x1]
            else:
                right[y, t] = left[y, x]
            mask[y, x] = True
    uncovered = ~covered
    if np.any(uncovered):
        if spec.occlusion_fill == "noise":
            fill = _texture(rng, (h, w), spec)
            right[uncovered] = fill[uncovered]
        else:
            for y in range(h):
                last = 0.0
                for t in range(w):
                    if covered[y, t]:
                        last = right[y, t]
                    else:
                        right[y, t] = last
    return right, mask


def sample_seeds(master_seed, count):
    """Independent child seeds via the splittable seed tree."""
    return [np.random.SeedSequence(master_seed, spawn_key=(i,)) for i in range(count)]


def generate_dataset(spec, count):
    """``count`` samples whose per-sample seeds split off the scene seed."""
    samples = []
    for i, child in enumerate(sample_seeds(spec.seed, count)):
        # entropy is reduced to one integer so the manifest can echo it
        child_seed = int(child.generate_state(1)[0])
        samples.append(generate(replace(spec, seed=child_seed)))
    return samples


# --- dataset directory layout ------------------------------------------------

MANIFEST_NAME = "manifest"


def _spec_manifest_lines(spec, count):
    lines = [f"count={count}"]
    for key in (
        "height", "width", "max_disparity", "num_layers", "dot_density",
        "texture", "occlusion_fill", "seed",
    ):
        lines.append(f"{key}={getattr(spec, key)}")
    disparities = spec.resolved_disparities()
    lines.append("layer_disparities=" + ",".join(_format_disparity(d) for d in disparities))
    return lines


def _format_disparity(d):
    if np.isscalar(d):
        return repr(float(d) if not float(d).is_integer() else int(d))
    return f"{d[0]}:{d[1]}"


def write_dataset(directory, spec, count, force=False):
    """Write samples plus manifest; refuses a non-empty directory unless forced."""
    os.makedirs(directory, exist_ok=True)
    if os.listdir(directory) and not force:
        raise InputOutputError(f"output directory {directory!r} is not empty (use force to overwrite)")
    samples = generate_dataset(spec, count)
    for i, sample in enumerate(samples):
        stem = os.path.join(directory, f"{i:04d}")
        write_pgm(f"{stem}_left.pgm", sample.left)
        write_pgm(f"{stem}_right.pgm", sample.right)
        write_pfm(f"{stem}_disp.pfm", sample.gt_disparity)
        write_pgm(f"{stem}_mask.pgm", sample.mask.astype(np.uint8) * 255)
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="ascii") as f:
        for line in _spec_manifest_lines(spec, count):
            f.write(line + "\n")
    return samples


def load_dataset(directory):
    """Read back every sample in the directory layout."""
    if not os.path.isdir(directory):
        raise InputOutputError(f"dataset directory {directory!r} does not exist")
    pattern = re.compile(r"^(\d{4})_left\.pgm$")
    stems = sorted(m.group(1) for name in os.listdir(directory) if (m := pattern.match(name)))
    if not stems:
        raise InputOutputError(f"no samples found in {directory!r}")
    samples = []
    for stem in stems:
        base = os.path.join(directory, stem)
        left = read_pgm(f"{base}_left.pgm")
        right = read_pgm(f"{base}_right.pgm")
        gt = read_pfm(f"{base}_disp.pfm")
        mask = read_pgm(f"{base}_mask.pgm") > 0.5
        if left.shape != right.shape or left.shape != gt.shape or left.shape != mask.shape:
            raise ContractViolation(f"sample {stem}: inconsistent extents")
        samples.append(
            StereoSample(
                left=left[:, :, None], right=right[:, :, None], gt_disparity=gt, mask=mask
            )
        )
    return samples


def read_manifest(directory):
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.isfile(path):
        raise InputOutputError(f"missing manifest in {directory!r}")
    entries = {}
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            key, _, value = line.strip().partition("=")
            entries[key] = value
    return entries
