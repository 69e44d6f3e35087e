"""Matching-cost computation: features, feature volume, 3-D auto-encoder.

Two weight-shared towers turn each image into a half-resolution feature
map. The right map is shifted across the candidate disparity range and
concatenated onto the left map, producing a 4-D feature volume. A 3-D
encoder/decoder then scores every (disparity, pixel) cell, and a final
upsampling layer brings the cost volume back to full input resolution —
including the disparity axis, which enters at half resolution because of
the stride-2 feature extraction.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .errors import ConfigurationError, ContractViolation
from .layers import BatchNorm, Conv2d, Conv3d, ConvTranspose3d


@dataclass
class BackboneConfig:
    feature_channels: int = 8  # F
    max_disparity: int = 16  # full-resolution disparity range
    num_residual_blocks: int = 2
    encoder_levels: int = 2
    height: int = 32
    width: int = 32
    image_channels: int = 1
    shift_sign: str = "minus"  # direction of the feature-volume shift

    def validate(self):
        divisor = 2 ** (self.encoder_levels + 1)
        for name in ("height", "width", "max_disparity"):
            value = getattr(self, name)
            if value % divisor != 0:
                raise ConfigurationError(
                    f"{name}={value} must be divisible by {divisor} "
                    f"(one halving at extraction + {self.encoder_levels} encoder halvings)"
                )
        if self.image_channels not in (1, 3):
            raise ConfigurationError(f"image_channels must be 1 or 3, got {self.image_channels}")
        if self.feature_channels < 1 or self.num_residual_blocks < 0 or self.encoder_levels < 1:
            raise ConfigurationError("feature_channels/num_residual_blocks/encoder_levels out of range")
        if self.shift_sign not in ("minus", "plus"):
            raise ConfigurationError(f"shift_sign must be 'minus' or 'plus', got {self.shift_sign}")
        if self.max_disparity // 2 > self.width // 2:
            raise ConfigurationError(
                f"max_disparity/2={self.max_disparity // 2} exceeds feature-map width "
                f"{self.width // 2}; every shift would alias"
            )


class _ResidualBlock:
    """Two 3x3 convolutions, each batch-normalized and activated, plus skip."""

    def __init__(self, rng, channels, dtype):
        self.conv1 = Conv2d(rng, 3, 3, channels, channels, dtype=dtype)
        self.bn1 = BatchNorm(channels, dtype=dtype)
        self.conv2 = Conv2d(rng, 3, 3, channels, channels, dtype=dtype)
        self.bn2 = BatchNorm(channels, dtype=dtype)

    def __call__(self, x):
        y = ops.relu(self.bn1(self.conv1(x)))
        y = ops.relu(self.bn2(self.conv2(y)))
        return ops.add(x, y)

    def members(self):
        return {"conv1": self.conv1, "bn1": self.bn1, "conv2": self.conv2, "bn2": self.bn2}


class FeatureExtractor:
    """Shared-weight tower: 5x5 stride-2 stem, residual blocks, linear head.

    Only the stem has stride 2, so the output sits at exactly half the
    input resolution with ``feature_channels`` channels. The head carries
    no normalization or activation; its raw response feeds the volume.
    """

    def __init__(self, config, rng, dtype=np.float32):
        f = config.feature_channels
        self.config = config
        self.stem = Conv2d(rng, 5, 5, config.image_channels, f, stride=2, dtype=dtype)
        self.stem_bn = BatchNorm(f, dtype=dtype)
        self.blocks = [_ResidualBlock(rng, f, dtype) for _ in range(config.num_residual_blocks)]
        self.head = Conv2d(rng, 3, 3, f, f, dtype=dtype)

    def __call__(self, image):
        if image.ndim != 3 or image.shape[-1] != self.config.image_channels:
            raise ContractViolation(
                f"extractor expects [H, W, {self.config.image_channels}], got {image.shape}"
            )
        if image.shape[0] != self.config.height or image.shape[1] != self.config.width:
            raise ConfigurationError(
                f"image extents {image.shape[:2]} do not match configured "
                f"{(self.config.height, self.config.width)}"
            )
        x = ops.relu(self.stem_bn(self.stem(image)))
        for block in self.blocks:
            x = block(x)
        return self.head(x)

    def _members(self):
        members = {"stem": self.stem, "stem_bn": self.stem_bn, "head": self.head}
        for i, block in enumerate(self.blocks):
            for name, layer in block.members().items():
                members[f"block{i}.{name}"] = layer
        return members

    def named_parameters(self, prefix):
        params = {}
        for name, layer in self._members().items():
            params.update(layer.named_parameters(f"{prefix}.{name}"))
        return params

    def named_state(self, prefix):
        state = {}
        for name, layer in self._members().items():
            if isinstance(layer, BatchNorm):
                state.update(layer.named_state(f"{prefix}.{name}"))
        return state

    def batch_norms(self):
        return [layer for layer in self._members().values() if isinstance(layer, BatchNorm)]


def extract_features(left, right, extractor):
    """Run the shared tower on both images: (base, shift) feature maps."""
    return extractor(left), extractor(right)


def build_feature_volume(base, shift, d_half, shift_sign="minus"):
    """Pair base features with disparity-shifted target features.

    volume[d, h, w] = base[h, w] ++ shift[h, (w -/+ d) mod W'] with the
    base channels first; the shift wraps around the feature-map width.
    """
    if base.shape != shift.shape:
        raise ContractViolation(f"feature maps differ: {base.shape} vs {shift.shape}")
    width = base.shape[1]
    if d_half > width:
        raise ConfigurationError(
            f"d_half={d_half} exceeds feature-map width {width}; shift would alias fully"
        )
    direction = -1 if shift_sign == "minus" else 1
    columns = np.arange(width)
    slices = []
    for d in range(d_half):
        shifted = ops.take(shift, (columns + direction * d) % width, axis=1)
        slices.append(ops.concat([base, shifted], axis=-1))
    return ops.stack(slices, axis=0)


class CostNetwork:
    """3-D auto-encoder scoring the feature volume into a cost volume.

    Encoder: two stride-1 stem convolutions, then one unit per level
    (stride-2 down conv + two stride-1 convs). Decoder: one stride-2
    transposed conv per level, each adding the same-resolution encoder
    output, then a final transposed conv with a single output channel and
    no normalization/activation that restores full input resolution.
    """

    def __init__(self, config, rng, dtype=np.float32):
        f = config.feature_channels
        levels = config.encoder_levels
        self.config = config
        self.stem1 = Conv3d(rng, (3, 3, 3), 2 * f, f, dtype=dtype)
        self.stem1_bn = BatchNorm(f, dtype=dtype)
        self.stem2 = Conv3d(rng, (3, 3, 3), f, f, dtype=dtype)
        self.stem2_bn = BatchNorm(f, dtype=dtype)

        # deepest unit widens to 4F, the rest run at 2F
        unit_channels = [2 * f] * (levels - 1) + [4 * f]
        self.encoder = []
        cin = f
        for cout in unit_channels:
            unit = {
                "down": Conv3d(rng, (3, 3, 3), cin, cout, stride=2, dtype=dtype),
                "down_bn": BatchNorm(cout, dtype=dtype),
                "conv1": Conv3d(rng, (3, 3, 3), cout, cout, dtype=dtype),
                "conv1_bn": BatchNorm(cout, dtype=dtype),
                "conv2": Conv3d(rng, (3, 3, 3), cout, cout, dtype=dtype),
                "conv2_bn": BatchNorm(cout, dtype=dtype),
            }
            self.encoder.append(unit)
            cin = cout

        # mirror: skip targets are the encoder unit outputs (deepest skipped),
        # then the stem output
        skip_channels = unit_channels[-2::-1] + [f]
        self.decoder = []
        for cout in skip_channels:
            self.decoder.append(
                {"up": ConvTranspose3d(rng, cin, cout, dtype=dtype), "bn": BatchNorm(cout, dtype=dtype)}
            )
            cin = cout
        self.final = ConvTranspose3d(rng, cin, 1, dtype=dtype)

    def __call__(self, volume):
        if volume.ndim != 4:
            raise ContractViolation(f"cost network expects [D, H, W, C], got {volume.shape}")
        divisor = 2**self.config.encoder_levels
        if any(e % divisor != 0 for e in volume.shape[:3]):
            raise ConfigurationError(
                f"volume extents {volume.shape[:3]} must be divisible by {divisor}"
            )
        x = ops.relu(self.stem1_bn(self.stem1(volume)))
        x = ops.relu(self.stem2_bn(self.stem2(x)))
        skips = [x]
        for unit in self.encoder:
            x = ops.relu(unit["down_bn"](unit["down"](x)))
            x = ops.relu(unit["conv1_bn"](unit["conv1"](x)))
            x = ops.relu(unit["conv2_bn"](unit["conv2"](x)))
            skips.append(x)
        skips.pop()  # the deepest resolution feeds the decoder directly
        for stage in self.decoder:
            skip = skips.pop()
            up = stage["up"](x, output_shape=skip.shape[:3])
            x = ops.relu(stage["bn"](ops.add(up, skip)))
        full = tuple(2 * e for e in x.shape[:3])
        out = self.final(x, output_shape=full)
        return ops.squeeze(out, axis=-1)

    def _members(self):
        members = {
            "stem1": self.stem1,
            "stem1_bn": self.stem1_bn,
            "stem2": self.stem2,
            "stem2_bn": self.stem2_bn,
            "final": self.final,
        }
        for i, unit in enumerate(self.encoder):
            for name, layer in unit.items():
                members[f"enc{i}.{name}"] = layer
        for i, stage in enumerate(self.decoder):
            for name, layer in stage.items():
                members[f"dec{i}.{name}"] = layer
        return members

    def named_parameters(self, prefix):
        params = {}
        for name, layer in self._members().items():
            params.update(layer.named_parameters(f"{prefix}.{name}"))
        return params

    def named_state(self, prefix):
        state = {}
        for name, layer in self._members().items():
            if isinstance(layer, BatchNorm):
                state.update(layer.named_state(f"{prefix}.{name}"))
        return state

    def batch_norms(self):
        return [layer for layer in self._members().values() if isinstance(layer, BatchNorm)]


def compute_cost_volume(volume, network):
    """Feature volume [D/2, H/2, W/2, 2F] -> cost volume [D, H, W]."""
    return network(volume)
