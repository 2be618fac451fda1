import numpy as np
import pytest

from Gesme.config import ModelConfig, TrainConfig
from Gesme.core import Tape, Tensor, backward, precision
from Gesme.data.samples import FeatureRoster, SampleSet
from Gesme.exceptions import ConfigError, DimensionError, NumericalError, UsageError
from Gesme.model import build, build_variant
from Gesme.modules.base import GROUP_ARCHITECTURE, GROUP_WEIGHTING
from Gesme.train import (LOSS_CSV, AdamState, adam_step, clip_gradients, fit, regularization, task_loss,
                         task_losses, total_loss, validation_loss)

from .conftest import check_gradients, micro_sets, random_batch


class TestLoss:
    def test_equal_inputs_give_zero(self):
        assert task_loss(Tensor([[1.0, 2.0]]), Tensor([[1.0, 2.0]])).item() == 0.0

    def test_single_sample_squared_norm(self):
        assert task_loss(Tensor([3.0, 4.0]), Tensor([0.0, 0.0])).item() == pytest.approx(25.0)

    def test_mean_over_batch(self):
        O = Tensor([[3.0, 4.0], [0.0, 0.0]])
        assert task_loss(O, Tensor(np.zeros((2, 2)))).item() == pytest.approx(12.5)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            task_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))

    def test_gradient(self, grad_rng):
        with precision(np.float64):
            O = Tensor(grad_rng.normal(size=(4, 3)), requires_grad=True, name="O")
            A = Tensor(grad_rng.normal(size=(4, 3)))
            check_gradients(lambda: task_loss(O, A), [O])
            np.testing.assert_allclose(O.grad, 2 * (O.data - A.data) / 4)

    def test_unregularized_total_is_sum_of_tasks(self, micro_config, micro_roster, rng):
        model = build(micro_config, micro_roster)
        batch = random_batch(micro_roster, 4, rng)
        expected = sum(loss.item() for loss in task_losses(model, batch).values())
        assert total_loss(model, batch, alpha=0.0, beta=0.0).item() == pytest.approx(expected, rel=1e-6)

    def test_total_matches_parameter_dump(self, micro_config, micro_roster, rng):
        model = build(micro_config, micro_roster)
        batch = random_batch(micro_roster, 4, rng)
        alpha, beta = 0.01, 0.02
        expected = sum(loss.item() for loss in task_losses(model, batch).values())
        for _, tensor, group in model.named_parameters():
            values = tensor.data.astype(np.float64)
            expected += alpha * np.sum(values ** 2) if group == GROUP_ARCHITECTURE else beta * np.sum(np.abs(values))
        assert total_loss(model, batch, alpha, beta).item() == pytest.approx(expected, rel=1e-4)

    def test_missing_target(self, micro_config, micro_roster, rng):
        model = build(micro_config, micro_roster)
        batch = random_batch(micro_roster, 2, rng)
        del batch.targets["b"]
        with pytest.raises(UsageError):
            total_loss(model, batch)

    def test_regularization_gradients_follow_partition(self, micro_config, micro_roster):
        alpha, beta = 0.5, 0.25
        with precision(np.float64):
            model = build(micro_config, micro_roster)
            model.zero_grad()
            with Tape():
                backward(regularization(model, alpha, beta))
            for name, tensor, group in model.named_parameters():
                if group == GROUP_WEIGHTING:
                    np.testing.assert_allclose(tensor.grad, beta * np.sign(tensor.data), err_msg=name)
                else:
                    np.testing.assert_allclose(tensor.grad, 2 * alpha * tensor.data, err_msg=name)


class TestAdam:
    def test_one_step_on_square(self):
        with precision(np.float64):
            w = Tensor([1.0], requires_grad=True, name="w")
            state = AdamState(["w"], [np.zeros(1)], [np.zeros(1)])
            adam_step(state, [w], [2.0 * w.data], lr=0.001)
        assert state.step == 1
        assert w.data[0] == pytest.approx(0.999, abs=1e-8)

    def test_zero_gradient_leaves_parameters(self):
        with precision(np.float64):
            w = Tensor([0.3, -0.7], requires_grad=True, name="w")
            state = AdamState(["w"], [np.zeros(2)], [np.zeros(2)])
            adam_step(state, [w], [np.zeros(2)], lr=0.001)
        assert np.max(np.abs(w.data - [0.3, -0.7])) < 1e-10

    def test_nan_gradient_names_parameter(self):
        w = Tensor([1.0], requires_grad=True, name="tower_a.W")
        state = AdamState(["tower_a.W"], [np.zeros(1)], [np.zeros(1)])
        with pytest.raises(NumericalError, match="tower_a.W"):
            adam_step(state, [w], [np.array([np.nan])], lr=0.001)
        assert w.data[0] == 1.0

    def test_state_matches_parameters(self, micro_config, micro_roster):
        model = build(micro_config, micro_roster)
        state = AdamState.create(model)
        assert [m.shape for m in state.m] == [t.shape for t in model.parameters()]
        assert state.step == 0

    def test_clip_gradients(self):
        grads = [np.array([3.0]), np.array([4.0])]
        assert clip_gradients(grads, 1.0) == pytest.approx(5.0)
        np.testing.assert_allclose(np.concatenate(grads), [0.6, 0.8])


class TestFit:
    def test_frozen_lr_stops_after_two_epochs(self, micro_config, micro_roster, sample_sets):
        model = build(micro_config, micro_roster)
        before = model.state_dict()
        cfg = TrainConfig(learning_rate=0.0, batch_size=8, patience=1, max_epochs=10)
        report = fit(model, sample_sets["train"], sample_sets["val"], cfg)
        assert report.epochs == 2
        assert report.stopped_early
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(value, before[name])

    def test_best_parameters_restored(self, micro_config, micro_roster, sample_sets, tmp_path):
        model = build(micro_config, micro_roster)
        cfg = TrainConfig(learning_rate=0.01, batch_size=8, patience=3, max_epochs=4, seed=1)
        report = fit(model, sample_sets["train"], sample_sets["val"], cfg, out_dir=tmp_path)
        restored = sum(validation_loss(model, sample_sets["val"]).values())
        assert restored == pytest.approx(min(report.val_loss), rel=1e-6)
        assert restored <= report.val_loss[-1] + 1e-9
        assert (tmp_path / LOSS_CSV).exists()
        assert report.checkpoint_path.endswith("gesme.manifest.json")
        header = (tmp_path / LOSS_CSV).read_text(encoding="utf-8").splitlines()[0]
        assert header == "epoch,train_loss,val_loss,val_a,val_b"

    def test_same_seed_same_history(self, micro_config, micro_roster, sample_sets):
        cfg = TrainConfig(learning_rate=0.01, batch_size=8, patience=5, max_epochs=2, seed=3)
        first = fit(build(micro_config, micro_roster), sample_sets["train"], sample_sets["val"], cfg)
        second = fit(build(micro_config, micro_roster), sample_sets["train"], sample_sets["val"], cfg)
        assert first.history == second.history

    def test_single_task_variant(self, micro_config, micro_roster, sample_sets):
        model = build_variant("sm", micro_config, micro_roster, task="a")
        report = fit(model, sample_sets["train"], sample_sets["val"], TrainConfig(batch_size=16, max_epochs=1))
        assert list(report.history[0]) == ["epoch", "train_loss", "val_loss", "val_a"]

    def test_empty_split_rejected(self, micro_config, micro_roster, sample_sets):
        empty = SampleSet("val", np.zeros(0, dtype=np.int64), {}, {}, {}, {})
        with pytest.raises(ConfigError):
            fit(build(micro_config, micro_roster), sample_sets["train"], empty, TrainConfig())

    def test_overlapping_splits_rejected(self, micro_config, micro_roster, sample_sets):
        with pytest.raises(ConfigError):
            fit(build(micro_config, micro_roster), sample_sets["train"], sample_sets["train"], TrainConfig())


def subset(sample_set: SampleSet, size: int) -> SampleSet:
    index = np.arange(size)
    return SampleSet(sample_set.name, sample_set.slots[index],
                     {source: block.take(index) for source, block in sample_set.inputs.items()},
                     {task: values[index] for task, values in sample_set.targets.items()},
                     {task: values[index] for task, values in sample_set.raw_targets.items()},
                     sample_set.task_sources)


@pytest.mark.slow
def test_overfits_tiny_set():
    sets, _ = micro_sets(days=9, n_zones=4, seed=5)
    roster = FeatureRoster(4, 2, ["OD", "D", "G"], ["wc_sunny", "wt_temp"], {"a": "city", "b": "city"})
    config = ModelConfig(tasks=["a", "b"], n_zones=4, lookback=2, conv_filters=[8, 8], convrnn_filters=[8, 8],
                         conv_filter_len=3, convrnn_filter_len=3, gru_hidden=4, seed=0)
    model = build(config, roster)
    cfg = TrainConfig(learning_rate=0.01, batch_size=16, alpha=0.0, beta=0.0, patience=1000, max_epochs=800)
    report = fit(model, subset(sets["train"], 16), sets["val"], cfg)
    assert min(report.train_loss) < 0.01 * report.train_loss[0]
