"""The assembled network: images in, disparity map out."""

import numpy as np

from .aggregation import CostAggregator
from .autodiff import Tensor
from .backbone import CostNetwork, FeatureExtractor, build_feature_volume, extract_features
from .disparity import soft_argmin
from .errors import ContractViolation


def as_image_tensor(image, channels=1):
    """Accept [H, W] or [H, W, C] numpy data, return a [H, W, C] Tensor."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[-1] != channels:
        raise ContractViolation(f"expected an [H, W, {channels}] image, got {arr.shape}")
    return Tensor(arr)


def build_model(backbone_config, aggregation_config, seed, dtype=np.float32):
    """Deterministic model construction: same seed, same initialization."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return StereoModel(backbone_config, aggregation_config, rng, dtype=dtype)


class StereoModel:
    """Feature extraction -> feature volume -> cost volume -> aggregation -> soft argmin."""

    def __init__(self, backbone_config, aggregation_config, rng, dtype=np.float32):
        backbone_config.validate()
        aggregation_config.validate()
        if aggregation_config.image_channels != backbone_config.image_channels:
            raise ContractViolation("backbone and aggregation disagree on image channels")
        self.backbone_config = backbone_config
        self.aggregation_config = aggregation_config
        self.extractor = FeatureExtractor(backbone_config, rng, dtype=dtype)
        self.cost_network = CostNetwork(backbone_config, rng, dtype=dtype)
        self.aggregator = CostAggregator(aggregation_config, rng, dtype=dtype)

    def forward(self, left, right):
        """Left/right numpy images -> (disparity Tensor [H, W], aggregated costs)."""
        channels = self.backbone_config.image_channels
        left_t = as_image_tensor(left, channels)
        right_t = as_image_tensor(right, channels)
        base, shift = extract_features(left_t, right_t, self.extractor)
        volume = build_feature_volume(
            base, shift, self.backbone_config.max_disparity // 2, self.backbone_config.shift_sign
        )
        raw_costs = self.cost_network(volume)
        aggregated = self.aggregator.aggregate(raw_costs, left_t)
        return soft_argmin(aggregated), aggregated

    def predict(self, left, right):
        """Disparity map as a numpy array (no tape participation)."""
        from .autodiff import no_grad

        with no_grad():
            disparity, _ = self.forward(left, right)
        return disparity.data

    def named_parameters(self):
        params = {}
        params.update(self.extractor.named_parameters("feature"))
        params.update(self.cost_network.named_parameters("cost"))
        params.update(self.aggregator.named_parameters("aggregation"))
        return params

    def trainable_parameters(self):
        """Parameters that participate under the current ablation flags."""
        params = {}
        params.update(self.extractor.named_parameters("feature"))
        params.update(self.cost_network.named_parameters("cost"))
        config = self.aggregation_config
        if not config.disable_aggregation:
            if not config.disable_proposal:
                params.update(
                    self.aggregator.proposal_stream.named_parameters("aggregation.proposal")
                )
            if not config.disable_guidance:
                params.update(
                    self.aggregator.guidance_stream.named_parameters("aggregation.guidance")
                )
        return params

    def named_state(self):
        state = {}
        state.update(self.extractor.named_state("feature"))
        state.update(self.cost_network.named_state("cost"))
        return state

    def batch_norms(self):
        return self.extractor.batch_norms() + self.cost_network.batch_norms()

    def set_training(self, training):
        for bn in self.batch_norms():
            bn.training = training

    def load_state(self, named_state):
        """Install running statistics exported by ``named_state``."""
        from .layers import BatchNorm

        for prefix, owner in (("feature", self.extractor), ("cost", self.cost_network)):
            for name, layer in owner._members().items():
                if isinstance(layer, BatchNorm):
                    mean_key = f"{prefix}.{name}.running_mean"
                    if mean_key in named_state:
                        layer.load_state(
                            named_state[mean_key], named_state[f"{prefix}.{name}.running_var"]
                        )
        return self
