from dataclasses import replace

import numpy as np
import pytest

from Gesme.core import precision
from Gesme.data.samples import FeatureRoster
from Gesme.exceptions import ConfigError, DimensionError, UsageError
from Gesme.model import CONTEXT_WIDTH, ablation_variants, build, build_variant
from Gesme.modules.base import GROUP_ARCHITECTURE, GROUP_WEIGHTING
from Gesme.train import total_loss

from .conftest import check_gradients, random_batch


def test_forward_shape_per_task(micro_config, micro_roster, rng):
    model = build(micro_config, micro_roster)
    batch = random_batch(micro_roster, 5, rng)
    for task in ("a", "b"):
        assert model(batch, task).shape == (5, 3)


def test_zero_input_gives_zero_output(micro_config, micro_roster, rng):
    model = build(micro_config, micro_roster)
    batch = random_batch(micro_roster, 2, rng, zero=True)
    np.testing.assert_array_equal(model(batch, "a").numpy(), np.zeros((2, 3)))


def test_tower_width(micro_config, micro_roster):
    model = build(micro_config, micro_roster)
    # ConvRNN-ME 3 + Conv-ME 3 + ZoneDist(GRU)-ME 2 + GRU-ME 2 + контексты
    assert model.tower_width == 3 + 3 + 2 + 2 + CONTEXT_WIDTH
    assert model.towers["a"].n_in == model.tower_width


@pytest.mark.parametrize("removed,width", [
    ("convrnn_me", 3 + 2 + 2 + 4),
    ("conv_me", 3 + 2 + 2 + 4),
    ("zonedist_gru_me", 3 + 3 + 2 + 4),
    ("gru_me", 3 + 3 + 2 + 4),
    ("weighting", 3 + 3 + 2 + 2 + 4),
])
def test_ablation_drops_block(removed, width, micro_config, micro_roster, rng):
    model = build(replace(micro_config, ablation=[removed]), micro_roster)
    assert model.tower_width == width
    assert removed not in model.blocks
    assert model(random_batch(micro_roster, 2, rng), "b").shape == (2, 3)


def test_ablation_variants_cover_every_block():
    assert ablation_variants() == [None, "weighting", "convrnn_me", "conv_me", "zonedist_gru_me", "gru_me"]


def test_removing_all_expert_blocks_rejected(micro_config, micro_roster):
    with pytest.raises(ConfigError):
        build(replace(micro_config, ablation=["convrnn_me", "conv_me", "zonedist_gru_me", "gru_me"]), micro_roster)


def test_weighting_ablation_leaves_no_fi_parameters(micro_config, micro_roster):
    model = build(replace(micro_config, ablation=["weighting"]), micro_roster)
    assert model.parameter_groups()[GROUP_WEIGHTING] == []
    assert model.weighting == {}


def test_parameter_partition_is_exhaustive(micro_config, micro_roster):
    model = build(micro_config, micro_roster)
    groups = model.audit_partition()
    names = [name for name, _, _ in model.named_parameters()]
    assert sorted(groups[GROUP_WEIGHTING] + groups[GROUP_ARCHITECTURE]) == sorted(names)
    assert len(set(names)) == len(names)
    assert all(name.startswith("weighting_") for name in groups[GROUP_WEIGHTING])
    assert set(model.weighting) == {"st", "weather", "cd", "cw", "cp"}


def test_unknown_task(micro_config, micro_roster, rng):
    model = build(micro_config, micro_roster)
    with pytest.raises(UsageError):
        model(random_batch(micro_roster, 1, rng), "c")


def test_batch_shape_mismatch(micro_config, micro_roster, rng):
    model = build(micro_config, micro_roster)
    other = FeatureRoster(3, 3, micro_roster.st_features, micro_roster.weather_features,
                          micro_roster.task_sources)
    with pytest.raises(DimensionError):
        model(random_batch(other, 2, rng), "a")


def test_filter_longer_than_zone_axis_rejected(micro_config, micro_roster):
    with pytest.raises(ConfigError):
        build(replace(micro_config, conv_filter_len=7), micro_roster)


def test_roster_must_match_config(micro_config, micro_roster):
    with pytest.raises(ConfigError):
        build(replace(micro_config, n_zones=4), micro_roster)


def test_without_weather_gru_block_is_skipped(micro_config, rng):
    roster = FeatureRoster(3, 2, ["OD", "D", "G"], [], {"a": "city", "b": "city"})
    model = build(micro_config, roster)
    assert "gru_me" not in model.blocks
    assert "weather" not in model.weighting
    assert model(random_batch(roster, 2, rng), "a").shape == (2, 3)


class TestVariants:
    def test_gesme_has_gate_per_task(self, micro_config, micro_roster):
        model = build_variant("gesme", micro_config, micro_roster)
        layer = model.blocks["conv_me"].layers[0]
        assert sorted(layer.gates) == ["a", "b"]
        assert layer.n_experts == 2

    def test_sesme_shares_one_gate(self, micro_config, micro_roster):
        model = build_variant("sesme", micro_config, micro_roster)
        for block in model.blocks.values():
            for layer in block.layers:
                assert list(layer.gates) == ["shared"]

    def test_sbsm_single_expert_without_gates(self, micro_config, micro_roster, rng):
        model = build_variant("sbsm", micro_config, micro_roster)
        for block in model.blocks.values():
            for layer in block.layers:
                assert layer.gates == {}
                assert layer.n_experts == 1
        batch = random_batch(micro_roster, 2, rng)
        assert model(batch, "a").shape == model(batch, "b").shape == (2, 3)

    def test_sm_trains_one_task(self, micro_config, micro_roster, rng):
        model = build_variant("sm", micro_config, micro_roster, task="b")
        assert model.tasks == ["b"]
        assert list(model.towers) == ["b"]
        with pytest.raises(UsageError):
            model(random_batch(micro_roster, 1, rng), "a")

    def test_sm_requires_task(self, micro_config, micro_roster):
        with pytest.raises(ConfigError):
            build_variant("sm", micro_config, micro_roster)

    def test_unknown_variant(self, micro_config, micro_roster):
        with pytest.raises(ConfigError):
            build_variant("mmoe", micro_config, micro_roster)

    def test_variants_share_expert_initialization(self, micro_config, micro_roster):
        gesme = dict((name, t) for name, t, _ in build_variant("gesme", micro_config, micro_roster).named_parameters())
        sesme = dict((name, t) for name, t, _ in build_variant("sesme", micro_config, micro_roster).named_parameters())
        experts = [name for name in gesme if ".expert" in name]
        assert experts
        for name in experts:
            np.testing.assert_array_equal(gesme[name].data, sesme[name].data)

    def test_same_seed_same_parameters(self, micro_config, micro_roster):
        first = build(micro_config, micro_roster).state_dict()
        second = build(micro_config, micro_roster).state_dict()
        assert first.keys() == second.keys()
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])


def test_model_gradients(micro_config, micro_roster, grad_rng, grad_seed):
    config = replace(micro_config, conv_activation="tanh", convrnn_activation="tanh", tower_activation="linear",
                     layers_per_block=1, conv_filters=[2], convrnn_filters=[2], seed=grad_seed)
    batch = random_batch(micro_roster, 2, grad_rng)
    with precision(np.float64):
        model = build(config, micro_roster)
        checked = [model.weighting["st"].W_FI, model.weighting["weather"].W_FI, model.towers["a"].W,
                   model.blocks["gru_me"].layers[0].gates["a"].head.b]

        def loss():
            return total_loss(model, batch, alpha=0.01, beta=0.01)

        check_gradients(loss, checked, rtol=1e-4, atol=1e-7)


def copy_common(source, target):
    """Копирует в target значения параметров с теми же именами и формами"""
    values = {name: tensor for name, tensor, _ in source.named_parameters()}
    copied = 0
    for name, tensor, _ in target.named_parameters():
        if name in values and values[name].shape == tensor.shape:
            tensor.data[...] = values[name].data
            copied += 1
    return copied


def test_single_expert_gesme_matches_shared_bottom(micro_config, micro_roster, rng):
    config = replace(micro_config, experts_per_layer=1)
    gesme = build_variant("gesme", config, micro_roster)
    sbsm = build_variant("sbsm", config, micro_roster)
    assert copy_common(sbsm, gesme) == len(sbsm.parameters())
    batch = random_batch(micro_roster, 3, rng)
    for task in ("a", "b"):
        np.testing.assert_allclose(gesme.features(batch, task).numpy(), sbsm.features(batch, task).numpy(),
                                   rtol=1e-6, atol=1e-7)


def test_cloned_gates_match_shared_gate(micro_config, micro_roster, rng):
    gesme = build_variant("gesme", micro_config, micro_roster)
    sesme = build_variant("sesme", micro_config, micro_roster)
    copy_common(sesme, gesme)
    for name, block in gesme.blocks.items():
        for layer, shared_layer in zip(block.layers, sesme.blocks[name].layers):
            shared = shared_layer.gates["shared"].parameters()
            for gate in layer.gates.values():
                for param, value in zip(gate.parameters(), shared):
                    param.data[...] = value.data
    batch = random_batch(micro_roster, 3, rng)
    for task in ("a", "b"):
        np.testing.assert_allclose(gesme(batch, task).numpy(), sesme(batch, task).numpy(), rtol=1e-6, atol=1e-6)
