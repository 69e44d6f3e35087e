import io

import numpy as np
import pytest

from deepstereo.aggregation import AggregationConfig
from deepstereo.autodiff import Tensor, backward, ops
from deepstereo.backbone import BackboneConfig
from deepstereo.errors import ConfigurationError, ContractViolation
from deepstereo.pipeline import build_model
from deepstereo.synthdata import SceneSpec, generate_dataset
from deepstereo.trainer import (
    Checkpoint,
    RMSPropState,
    TrainConfig,
    checkpoint_from_model,
    epoch_order,
    evaluate_model,
    inference_mode,
    install_checkpoint,
    load_checkpoint,
    rmsprop_step,
    sample_index,
    save_checkpoint,
    train,
)


def tiny_model(seed=0, **agg_overrides):
    backbone = BackboneConfig(
        feature_channels=4, max_disparity=4, num_residual_blocks=1,
        encoder_levels=1, height=16, width=16,
    )
    agg_fields = {"num_proposals": 2, "guidance_channels": 4, **agg_overrides}
    return build_model(backbone, AggregationConfig(**agg_fields), seed)


def tiny_dataset(count=3, seed=5):
    spec = SceneSpec(height=16, width=16, max_disparity=4, num_layers=2, seed=seed)
    return generate_dataset(spec, count)


class TestRmsprop:
    def test_zero_gradient_leaves_parameter_unchanged(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        params = {"p": p}
        state = RMSPropState(params)
        rmsprop_step(params, state, TrainConfig(learning_rate=1e-4))
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_hand_computed_single_step(self):
        p = Tensor(np.array(1.0, dtype=np.float64), requires_grad=True)
        p.grad = np.array(1.0)
        params = {"p": p}
        state = RMSPropState(params)
        rmsprop_step(params, state, TrainConfig(learning_rate=1e-4))
        assert state.v["p"] == pytest.approx(0.1, abs=1e-12)
        assert float(p.data) == pytest.approx(0.99968377, abs=1e-8)

    def test_two_steps_on_quadratic_match_scalar_oracle(self):
        target = 0.25
        p = Tensor(np.array(1.0, dtype=np.float64), requires_grad=True)
        params = {"p": p}
        state = RMSPropState(params)
        config = TrainConfig(learning_rate=0.01)

        # independent scalar recomputation
        expect_p, expect_v = 1.0, 0.0
        for _ in range(2):
            g = 2.0 * (expect_p - target)
            expect_v = 0.9 * expect_v + 0.1 * g * g
            expect_p = expect_p - 0.01 * g / (np.sqrt(expect_v) + 1e-8)

        for _ in range(2):
            p.zero_grad()
            loss = ops.mul(ops.sub(p, Tensor(np.array(target))), ops.sub(p, Tensor(np.array(target))))
            backward(loss)
            rmsprop_step(params, state, config)
        assert float(p.data) == pytest.approx(expect_p, abs=1e-10)
        assert float(state.v["p"]) == pytest.approx(expect_v, abs=1e-10)

    def test_missing_gradient_is_contract_violation(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        params = {"p": p}
        with pytest.raises(ContractViolation, match="missing gradient"):
            rmsprop_step(params, RMSPropState(params), TrainConfig())


class TestShuffle:
    def test_epoch_order_is_a_seeded_permutation(self):
        order = epoch_order(3, 0, 8)
        assert sorted(order) == list(range(8))
        np.testing.assert_array_equal(order, epoch_order(3, 0, 8))
        assert not np.array_equal(order, epoch_order(3, 1, 8))

    def test_sample_index_walks_epochs(self):
        count = 4
        seen = [sample_index(0, it, count) for it in range(1, 9)]
        assert sorted(seen[:4]) == list(range(4))
        assert sorted(seen[4:]) == list(range(4))


class TestTrainLoop:
    def test_zero_learning_rate_keeps_initial_parameters(self):
        model = tiny_model(seed=1)
        dataset = tiny_dataset()
        before = {k: v.data.copy() for k, v in model.named_parameters().items()}
        train(model, dataset, TrainConfig(learning_rate=0.0, iterations=1))
        after = model.named_parameters()
        for name, original in before.items():
            np.testing.assert_array_equal(after[name].data, original)

    def test_identical_seeds_give_bit_identical_losses(self):
        config = TrainConfig(iterations=10, shuffle_seed=7)
        dataset = tiny_dataset()
        lines_a = [r.line() for r in train(tiny_model(seed=2), dataset, config)[0]]
        lines_b = [r.line() for r in train(tiny_model(seed=2), dataset, config)[0]]
        assert lines_a == lines_b

    def test_log_format(self):
        model = tiny_model(seed=3)
        log = io.StringIO()
        records, _ = train(model, tiny_dataset(), TrainConfig(iterations=2), log_file=log)
        lines = log.getvalue().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("iter=1 loss=")
        assert "loss_sum=" in lines[0]
        assert records[0].line() == lines[0]

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigurationError):
            train(tiny_model(), [], TrainConfig(iterations=1))

    def test_loss_decreases_on_tiny_problem(self):
        model = tiny_model(seed=4)
        records, _ = train(model, tiny_dataset(count=2), TrainConfig(iterations=40, learning_rate=3e-4))
        first = np.mean([r.loss for r in records[:5]])
        last = np.mean([r.loss for r in records[-5:]])
        assert last < first


class TestInferenceMode:
    def test_untrained_model_evaluates_with_batch_statistics(self):
        model = tiny_model(seed=5)
        report, per_sample = evaluate_model(model, tiny_dataset(count=2))
        assert report.valid_pixels > 0
        assert len(per_sample) == 2
        # state untouched: still uninitialized
        assert not any(bn.state.initialized for bn in model.batch_norms())

    def test_trained_model_uses_eval_mode(self):
        model = tiny_model(seed=6)
        dataset = tiny_dataset()
        train(model, dataset, TrainConfig(iterations=2))
        with inference_mode(model):
            assert all(not bn.training for bn in model.batch_norms())
        assert all(bn.training for bn in model.batch_norms())

    def test_eval_right_after_training_reproduces_logged_metrics(self):
        model = tiny_model(seed=7)
        dataset = tiny_dataset()
        log = io.StringIO()
        train(
            model, dataset,
            TrainConfig(iterations=4, eval_interval=4),
            log_file=log, eval_dataset=dataset,
        )
        eval_lines = [l for l in log.getvalue().splitlines() if l.startswith("eval ")]
        assert len(eval_lines) == 1
        report, _ = evaluate_model(model, dataset)
        logged = dict(kv.split("=") for kv in eval_lines[0].split()[1:])
        assert float(logged["err_gt_1px"]) == pytest.approx(report.err_gt_1px, abs=1e-4)
        assert float(logged["err_gt_3px"]) == pytest.approx(report.err_gt_3px, abs=1e-4)
        assert float(logged["mae"]) == pytest.approx(report.mae, abs=1e-6)


class TestCheckpoint:
    def test_save_load_save_is_byte_identical(self, tmp_path):
        model = tiny_model(seed=8)
        dataset = tiny_dataset()
        _, state = train(model, dataset, TrainConfig(iterations=3))
        path_a = tmp_path / "a.ckpt"
        path_b = tmp_path / "b.ckpt"
        echo = {"train": {"iterations": 3}, "seed": 8}
        save_checkpoint(path_a, checkpoint_from_model(model, state, 3, echo))
        save_checkpoint(path_b, load_checkpoint(path_a))
        assert path_a.read_bytes() == path_b.read_bytes()

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        config = TrainConfig(iterations=6, shuffle_seed=11)
        dataset = tiny_dataset()

        straight = [r.line() for r in train(tiny_model(seed=9), dataset, config)[0]]

        model = tiny_model(seed=9)
        half = TrainConfig(iterations=3, shuffle_seed=11)
        records_a, state = train(model, dataset, half)
        path = tmp_path / "mid.ckpt"
        save_checkpoint(path, checkpoint_from_model(model, state, 3, {}))

        resumed = tiny_model(seed=9)
        loaded_state = install_checkpoint(resumed, load_checkpoint(path))
        records_b, _ = train(
            resumed, dataset, config, start_iteration=3, optimizer_state=loaded_state
        )
        combined = [r.line() for r in records_a + records_b]
        assert combined == straight

    def test_install_rejects_wider_aggregation(self, tmp_path):
        model = tiny_model(seed=10)
        state = RMSPropState(model.named_parameters())
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, checkpoint_from_model(model, state, 0, {}))
        other = tiny_model(seed=0, num_proposals=3)
        with pytest.raises(ConfigurationError, match="along_depth"):
            install_checkpoint(other, load_checkpoint(path))

    def test_install_rejects_missing_parameters(self, tmp_path):
        model = tiny_model(seed=10)
        state = RMSPropState(model.named_parameters())
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, checkpoint_from_model(model, state, 0, {}))
        backbone = BackboneConfig(
            feature_channels=4, max_disparity=4, num_residual_blocks=2,
            encoder_levels=1, height=16, width=16,
        )
        other = build_model(backbone, AggregationConfig(num_proposals=2, guidance_channels=4), 0)
        with pytest.raises(ConfigurationError, match="mismatch"):
            install_checkpoint(other, load_checkpoint(path))

    def test_install_rejects_wrong_shape(self, tmp_path):
        model = tiny_model(seed=11)
        state = RMSPropState(model.named_parameters())
        ckpt = checkpoint_from_model(model, state, 0, {})
        name = sorted(ckpt.params)[0]
        ckpt.params[name] = np.zeros((2, 2), dtype=np.float32)
        path = tmp_path / "bad.ckpt"
        save_checkpoint(path, ckpt)
        with pytest.raises(ConfigurationError, match="shape"):
            install_checkpoint(tiny_model(seed=11), load_checkpoint(path))

    def test_config_echo_round_trips(self, tmp_path):
        model = tiny_model(seed=12)
        state = RMSPropState(model.named_parameters())
        echo = {"backbone": {"height": 16}, "scene": {"texture": "dots"}}
        path = tmp_path / "e.ckpt"
        save_checkpoint(path, checkpoint_from_model(model, state, 5, echo))
        loaded = load_checkpoint(path)
        assert loaded.config == echo
        assert loaded.iteration == 5
