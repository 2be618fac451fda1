import pytest

from Gesme.config import ModelConfig, TrainConfig, preset, resolve
from Gesme.exceptions import (ConfigError, CorruptCheckpointError, DimensionError, GesmeError, IngestError,
                              NumericalError, UsageError, create_gesme_error)


def test_construction_does_not_validate():
    config = ModelConfig(conv_filter_len=4)
    with pytest.raises(ConfigError) as info:
        config.validate()
    assert info.value.key == "model.conv_filter_len"


def test_validate_returns_self():
    config = TrainConfig()
    assert config.validate() is config


def test_resolve_validates_after_overrides():
    with pytest.raises(ConfigError) as info:
        resolve("scenario-synth", overrides={"train.batch_size": "0"})
    assert info.value.key == "train.batch_size"

    with pytest.raises(ConfigError):
        resolve("scenario-synth", overrides={"scenario.interval_minutes": "7"})


def test_resolve_syncs_model_with_scenario():
    run = resolve("scenario-synth", overrides={"scenario.lookback": "3"})
    assert run.model.lookback == 3
    assert run.model.tasks == run.scenario.task_names
    assert run.model.n_zones == run.scenario.n_zones


def test_preset_is_not_validated_until_resolved():
    run = preset("scenario-synth")
    run.train.patience = 0
    with pytest.raises(ConfigError):
        run.validate()


@pytest.mark.parametrize("error, code", [
    (DimensionError(), 2),
    (ConfigError(), 2),
    (UsageError(), 2),
    (IngestError(path="orders.csv", line=3), 2),
    (CorruptCheckpointError(path="gesme.bin"), 2),
    (NumericalError(source="gru"), 3),
])
def test_exit_codes(error, code):
    assert error.exit_code == code
    assert error.code == code


def test_error_has_only_exit_code_property():
    properties = {name for name, value in vars(GesmeError).items() if isinstance(value, property)}
    assert properties == {"exit_code"}


def test_create_gesme_error():
    error = create_gesme_error("ingest", "Нет колонки", {"path": "orders.csv", "line": 7})
    assert isinstance(error, IngestError)
    assert error.message == "orders.csv:7: Нет колонки"

    assert isinstance(create_gesme_error("numerical", "NaN", {"source": "loss"}), NumericalError)
    fallback = create_gesme_error("other", "Сбой")
    assert type(fallback) is GesmeError
    assert fallback.exit_code == 2
