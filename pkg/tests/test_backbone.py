import numpy as np
import pytest

from deepstereo.autodiff import Tensor, backward, no_grad, ops, set_default_dtype
from deepstereo.backbone import (
    BackboneConfig,
    CostNetwork,
    FeatureExtractor,
    build_feature_volume,
    extract_features,
)
from deepstereo.errors import ConfigurationError
from deepstereo import gradcheck


def desk_config(**overrides):
    return BackboneConfig(**overrides)


class TestConfig:
    def test_desk_defaults_validate(self):
        desk_config().validate()

    @pytest.mark.parametrize("field,value", [("height", 20), ("width", 12), ("max_disparity", 4)])
    def test_divisibility_enforced(self, field, value):
        config = desk_config(**{field: value})
        with pytest.raises(ConfigurationError):
            config.validate()

    def test_excessive_disparity_rejected(self):
        config = desk_config(width=16, height=16, max_disparity=48)
        with pytest.raises(ConfigurationError):
            config.validate()


class TestFeatureExtractor:
    def test_identical_images_share_weights(self, rng):
        config = desk_config()
        extractor = FeatureExtractor(config, rng)
        image = Tensor(rng.random((32, 32, 1)).astype(np.float32))
        base, shift = extract_features(image, image, extractor)
        np.testing.assert_array_equal(base.data, shift.data)

    def test_output_extents_are_half_resolution(self, rng):
        extractor = FeatureExtractor(desk_config(), rng)
        out = extractor(Tensor(rng.random((32, 32, 1)).astype(np.float32)))
        assert out.shape == (16, 16, 8)

    def test_zeroed_head_kernel_gives_constant_output(self, rng):
        extractor = FeatureExtractor(desk_config(), rng)
        extractor.head.kernel.data[...] = 0.0
        extractor.head.bias.data[...] = 0.25
        out = extractor(Tensor(rng.random((32, 32, 1)).astype(np.float32)))
        np.testing.assert_allclose(out.data, 0.25, atol=1e-6)

    def test_wrong_extents_rejected(self, rng):
        extractor = FeatureExtractor(desk_config(), rng)
        with pytest.raises(ConfigurationError):
            extractor(Tensor(np.zeros((16, 16, 1), dtype=np.float32)))


class TestFeatureVolume:
    def test_zero_shift_slice_is_plain_concat(self, rng):
        base = Tensor(rng.normal(size=(4, 6, 3)).astype(np.float32))
        shift = Tensor(rng.normal(size=(4, 6, 3)).astype(np.float32))
        volume = build_feature_volume(base, shift, d_half=3)
        np.testing.assert_array_equal(volume.data[0, :, :, :3], base.data)
        np.testing.assert_array_equal(volume.data[0, :, :, 3:], shift.data)

    def test_shift_wraps_around_width(self, rng):
        width = 4
        base = Tensor(rng.normal(size=(3, width, 2)).astype(np.float32))
        shift = Tensor(rng.normal(size=(3, width, 2)).astype(np.float32))
        volume = build_feature_volume(base, shift, d_half=2)
        # at d=1, column 0 reads the shifted map at (0 - 1) mod 4 = 3
        np.testing.assert_array_equal(volume.data[1, :, 0, 2:], shift.data[:, 3, :])

    def test_plus_direction_mirrors_shift(self, rng):
        width = 4
        base = Tensor(rng.normal(size=(2, width, 1)).astype(np.float32))
        shift = Tensor(rng.normal(size=(2, width, 1)).astype(np.float32))
        volume = build_feature_volume(base, shift, d_half=2, shift_sign="plus")
        np.testing.assert_array_equal(volume.data[1, :, 0, 1:], shift.data[:, 1, :])

    def test_desk_volume_shape(self, rng):
        config = desk_config()
        extractor = FeatureExtractor(config, rng)
        left = Tensor(rng.random((32, 32, 1)).astype(np.float32))
        right = Tensor(rng.random((32, 32, 1)).astype(np.float32))
        base, shift = extract_features(left, right, extractor)
        volume = build_feature_volume(base, shift, config.max_disparity // 2)
        assert volume.shape == (8, 16, 16, 16)

    def test_oversized_shift_rejected(self, rng):
        maps = Tensor(rng.normal(size=(2, 4, 1)).astype(np.float32))
        with pytest.raises(ConfigurationError):
            build_feature_volume(maps, maps, d_half=5)


class TestCostNetwork:
    def test_desk_cost_volume_shape(self, rng):
        config = desk_config()
        network = CostNetwork(config, rng)
        volume = Tensor(rng.normal(size=(8, 16, 16, 16)).astype(np.float32) * 0.1)
        out = network(volume)
        assert out.shape == (16, 32, 32)

    def test_zeroed_skip_sources_still_produce_output(self, rng):
        config = desk_config()
        network = CostNetwork(config, rng)
        network.stem2.kernel.data[...] = 0.0
        for unit in network.encoder:
            unit["conv2"].kernel.data[...] = 0.0
        volume = Tensor(rng.normal(size=(8, 16, 16, 16)).astype(np.float32))
        out = network(volume)
        assert out.shape == (16, 32, 32)
        assert np.all(np.isfinite(out.data))

    def test_indivisible_volume_rejected(self, rng):
        network = CostNetwork(desk_config(), rng)
        with pytest.raises(ConfigurationError):
            network(Tensor(np.zeros((6, 16, 16, 16), dtype=np.float32)))

    def test_gradient_matches_finite_differences_on_tiny_config(self):
        set_default_dtype(np.float64)
        try:
            config = BackboneConfig(
                feature_channels=2, max_disparity=4, num_residual_blocks=1,
                encoder_levels=1, height=8, width=8,
            )
            config.validate()
            rng = np.random.default_rng(77)
            network = CostNetwork(config, rng, dtype=np.float64)
            volume = Tensor(rng.normal(size=(2, 4, 4, 4)) * 0.5)
            kernels = [
                t for name, t in network.named_parameters("cost").items()
                if name.endswith(".kernel") and (".enc" in name or "stem" in name)
            ]
            for p in kernels:
                p.data = p.data + rng.normal(0.0, 0.1, size=p.shape)

            def loss_fn():
                return ops.mean_reduce(network(volume))

            worst = gradcheck.check_instance(kernels, loss_fn)
            assert worst < 1e-3
        finally:
            set_default_dtype(np.float32)


class TestShapeChain:
    @pytest.mark.parametrize("seed", range(4))
    def test_ratio_chain_for_random_valid_configs(self, seed):
        rng = np.random.default_rng(seed)
        levels = int(rng.integers(1, 3))
        unit = 2 ** (levels + 1)
        config = BackboneConfig(
            feature_channels=int(rng.integers(2, 6)),
            max_disparity=unit * int(rng.integers(1, 3)),
            num_residual_blocks=int(rng.integers(0, 3)),
            encoder_levels=levels,
            height=unit * int(rng.integers(2, 4)),
            width=unit * int(rng.integers(2, 4)),
        )
        config.validate()
        extractor = FeatureExtractor(config, rng)
        network = CostNetwork(config, rng)
        left = Tensor(rng.random((config.height, config.width, 1)).astype(np.float32))
        right = Tensor(rng.random((config.height, config.width, 1)).astype(np.float32))
        with no_grad():
            base, shift = extract_features(left, right, extractor)
            assert base.shape == (config.height // 2, config.width // 2, config.feature_channels)
            volume = build_feature_volume(base, shift, config.max_disparity // 2)
            assert volume.shape == (
                config.max_disparity // 2,
                config.height // 2,
                config.width // 2,
                2 * config.feature_channels,
            )
            costs = network(volume)
            assert costs.shape == (config.max_disparity, config.height, config.width)

    def test_swapping_inputs_changes_costs_but_not_shape(self, rng):
        config = desk_config()
        extractor = FeatureExtractor(config, rng)
        network = CostNetwork(config, rng)
        left = Tensor(rng.random((32, 32, 1)).astype(np.float32))
        right = Tensor(rng.random((32, 32, 1)).astype(np.float32))
        with no_grad():
            def run(a, b):
                base, shift = extract_features(a, b, extractor)
                return network(build_feature_volume(base, shift, config.max_disparity // 2))

            forward_costs = run(left, right)
            swapped_costs = run(right, left)
        assert forward_costs.shape == swapped_costs.shape
        assert not np.array_equal(forward_costs.data, swapped_costs.data)

    def test_activations_finite_on_unit_interval_inputs(self, rng):
        config = desk_config()
        extractor = FeatureExtractor(config, rng)
        network = CostNetwork(config, rng)
        left = Tensor(rng.random((32, 32, 1)).astype(np.float32))
        right = Tensor(rng.random((32, 32, 1)).astype(np.float32))
        with no_grad():
            base, shift = extract_features(left, right, extractor)
            costs = network(build_feature_volume(base, shift, config.max_disparity // 2))
        assert np.all(np.isfinite(costs.data))
