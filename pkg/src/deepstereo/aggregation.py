"""Two-stream learned cost aggregation.

The raw cost volume is refined in three stages:

  * proposal stream — separable 3-D convolutions (one rectangle filter per
    axis: depth, then height, then width, then a 1x1x1 mixing layer)
    produce G candidate aggregated volumes;
  * guidance stream — a light 2-D network over the reference image yields
    a per-pixel probability distribution over the G candidates, shared
    across all disparities;
  * fusion — candidates are weighted by their guidance probability and the
    best one wins per element (hard max, gradient only to the winner).

Ablation switches can bypass any stage, reducing the block to a plain
pass-through, an unguided average, or guidance applied to raw costs.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .errors import ConfigurationError, ContractViolation
from .layers import Conv2d, Conv3d


@dataclass
class AggregationConfig:
    num_proposals: int = 4
    guidance_channels: int = 16
    image_channels: int = 1
    disable_guidance: bool = False
    disable_proposal: bool = False
    disable_aggregation: bool = False

    def validate(self):
        if self.num_proposals < 1:
            raise ConfigurationError(f"num_proposals must be >= 1, got {self.num_proposals}")
        if self.guidance_channels < 1:
            raise ConfigurationError(
                f"guidance_channels must be >= 1, got {self.guidance_channels}"
            )


class ProposalStream:
    """1 -> G candidate volumes via per-axis rectangle filters."""

    def __init__(self, config, rng, dtype=np.float32):
        g = config.num_proposals
        self.along_depth = Conv3d(rng, (3, 1, 1), 1, g, dtype=dtype)
        self.along_height = Conv3d(rng, (1, 3, 1), g, g, dtype=dtype)
        self.along_width = Conv3d(rng, (1, 1, 3), g, g, dtype=dtype)
        self.mix = Conv3d(rng, (1, 1, 1), g, g, dtype=dtype)
        # freshly initialized guidance is near uniform, so fusion scales the
        # winning candidate by ~1/G; compensate here to keep the fused volume
        # at the raw cost scale, out of soft-argmin's flat low-gradient regime
        self.mix.kernel.data *= g

    def __call__(self, cost_volume):
        """cost_volume: Tensor [D, H, W] -> proposals [D, H, W, G]."""
        if cost_volume.ndim != 3:
            raise ContractViolation(f"proposal stream expects [D, H, W], got {cost_volume.shape}")
        x = ops.reshape(cost_volume, cost_volume.shape + (1,))
        x = ops.relu(self.along_depth(x))
        x = ops.relu(self.along_height(x))
        x = ops.relu(self.along_width(x))
        return self.mix(x)  # linear mixing head

    def named_parameters(self, prefix):
        params = {}
        for name, layer in (
            ("along_depth", self.along_depth),
            ("along_height", self.along_height),
            ("along_width", self.along_width),
            ("mix", self.mix),
        ):
            params.update(layer.named_parameters(f"{prefix}.{name}"))
        return params


class GuidanceStream:
    """Reference image -> per-pixel distribution over the G candidates."""

    def __init__(self, config, rng, dtype=np.float32):
        cg, g = config.guidance_channels, config.num_proposals
        self.wide = Conv2d(rng, 5, 5, config.image_channels, cg, dtype=dtype)
        self.narrow = Conv2d(rng, 3, 3, cg, cg, dtype=dtype)
        self.summarize = Conv2d(rng, 1, 1, cg, g, dtype=dtype)

    def logits(self, reference):
        """Pre-softmax guidance scores [H, W, G]."""
        if reference.ndim != 3:
            raise ContractViolation(f"guidance stream expects [H, W, C], got {reference.shape}")
        x = ops.relu(self.wide(reference))
        x = ops.relu(self.narrow(x))
        return self.summarize(x)

    def __call__(self, reference):
        return ops.softmax(self.logits(reference), axis=-1)

    def named_parameters(self, prefix):
        params = {}
        for name, layer in (("wide", self.wide), ("narrow", self.narrow), ("summarize", self.summarize)):
            params.update(layer.named_parameters(f"{prefix}.{name}"))
        return params


def fuse(proposals, guidance):
    """Winner-take-all fusion of candidates under their guidance weights.

    proposals [D, H, W, G] x guidance [H, W, G] (broadcast over disparity)
    -> cost volume [D, H, W]. Ties break to the lowest candidate index and
    the gradient flows only through each element's winner.
    """
    if proposals.ndim != 4 or guidance.ndim != 3:
        raise ContractViolation(
            f"fuse expects [D, H, W, G] and [H, W, G], got {proposals.shape}/{guidance.shape}"
        )
    if proposals.shape[1:] != guidance.shape:
        raise ContractViolation(
            f"fuse extent mismatch: proposals {proposals.shape} vs guidance {guidance.shape}"
        )
    weighted = ops.mul(proposals, guidance)
    fused, _ = ops.max_reduce(weighted, axis=-1)
    return fused


class CostAggregator:
    """Full aggregation block with ablation switches."""

    def __init__(self, config, rng, dtype=np.float32):
        config.validate()
        self.config = config
        self.proposal_stream = ProposalStream(config, rng, dtype=dtype)
        self.guidance_stream = GuidanceStream(config, rng, dtype=dtype)

    def aggregate(self, cost_volume, reference):
        """cost_volume [D, H, W] + reference image [H, W, C] -> [D, H, W]."""
        config = self.config
        if config.disable_aggregation:
            return cost_volume
        if reference.shape[:2] != cost_volume.shape[1:]:
            raise ContractViolation(
                f"reference extents {reference.shape[:2]} do not match "
                f"cost volume extents {cost_volume.shape[1:]}"
            )
        g = config.num_proposals
        if config.disable_proposal:
            stacked = ops.stack([cost_volume] * g, axis=-1)
        else:
            stacked = self.proposal_stream(cost_volume)
        if config.disable_guidance:
            uniform = np.full(cost_volume.shape[1:] + (g,), 1.0 / g, dtype=cost_volume.dtype)
            guidance = ops.as_tensor(uniform)
        else:
            guidance = self.guidance_stream(reference)
        return fuse(stacked, guidance)

    def named_parameters(self, prefix):
        params = {}
        params.update(self.proposal_stream.named_parameters(f"{prefix}.proposal"))
        params.update(self.guidance_stream.named_parameters(f"{prefix}.guidance"))
        return params

    def guidance_summary(self, reference):
        """Mean over candidates of the pre-softmax guidance, for inspection.

        The normalized guidance averages to exactly 1/G at every pixel, so
        the raw scores are the quantity worth looking at.
        """
        with_logits = self.guidance_stream.logits(reference)
        return with_logits.data.mean(axis=-1)
