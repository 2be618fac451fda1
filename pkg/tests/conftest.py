from typing import Callable, Sequence

import numpy as np
import pytest

from Gesme.config import ModelConfig, ScenarioConfig, TaskSpec
from Gesme.core import Tape, Tensor, backward, no_grad
from Gesme.data.features import encode_contexts
from Gesme.data.partition import partition_time
from Gesme.data.samples import FeatureRoster, InputBlock, SampleBatch, SplitSpec, make_samples


def numeric_grad(loss_fn: Callable[[], Tensor], tensor: Tensor, eps: float = 1e-6) -> np.ndarray:
    """Центральные разности по всем элементам tensor.data"""
    grad = np.zeros_like(tensor.data, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        with no_grad():
            plus = loss_fn().item()
        flat[i] = original - eps
        with no_grad():
            minus = loss_fn().item()
        flat[i] = original
        grad.reshape(-1)[i] = (plus - minus) / (2 * eps)
    return grad


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], rtol: float = 1e-5,
                    atol: float = 1e-7, eps: float = 1e-6):
    """Сравнивает градиенты ленты с центральными разностями (вызывать внутри precision(float64))"""
    for tensor in tensors:
        tensor.zero_grad()
    with Tape():
        loss = loss_fn()
        backward(loss)
    analytic = [tensor.grad.copy() for tensor in tensors]
    for tensor, grad in zip(tensors, analytic):
        np.testing.assert_allclose(grad, numeric_grad(loss_fn, tensor, eps), rtol=rtol, atol=atol,
                                   err_msg=f"градиент {tensor.name}")


def random_batch(roster: FeatureRoster, size: int, rng: np.random.Generator, zero: bool = False) -> SampleBatch:
    """Батч со случайными (или нулевыми) входами всех источников"""
    N, B = roster.n_zones, roster.lookback
    F_st, F_w = len(roster.st_features), len(roster.weather_features)
    fill = (lambda shape: np.zeros(shape)) if zero else (lambda shape: rng.random(shape))

    inputs = {}
    for source in roster.sources:
        period = rng.integers(0, 3, size=size)
        CD = np.zeros((size, N, 3)) if zero else np.repeat(np.eye(3)[period][:, None, :], N, axis=1)
        inputs[source] = InputBlock(fill((size, N, F_st, B)), fill((size, B, F_w)), CD,
                                    fill((size, N)), fill((size, N)))
    targets = {task: rng.random((size, N)) for task in roster.task_sources}
    return SampleBatch(inputs, targets, dict(roster.task_sources), np.arange(size))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=range(20))
def grad_seed(request) -> int:
    """Зерно случайного экземпляра для проверок градиентов"""
    return request.param


@pytest.fixture
def grad_rng(grad_seed):
    return np.random.default_rng(grad_seed)


@pytest.fixture
def micro_roster() -> FeatureRoster:
    return FeatureRoster(3, 2, ["OD", "D", "G"], ["wc_sunny", "wt_temp"], {"a": "city", "b": "city"})


@pytest.fixture
def micro_config() -> ModelConfig:
    return ModelConfig(tasks=["a", "b"], n_zones=3, lookback=2, experts_per_layer=2, layers_per_block=2,
                       conv_filters=[2, 3], conv_filter_len=3, convrnn_filters=[2, 3], convrnn_filter_len=3,
                       gru_hidden=2, gate_hidden=2, seed=7)


def micro_fields(days: int = 2, n_zones: int = 3, seed: int = 0):
    """Поля OD/D/G одного источника на часовых интервалах, погода из двух столбцов и POI"""
    gen = np.random.default_rng(seed)
    axis = partition_time("2016-01-04", days, 60)
    phase = 2 * np.pi * axis.slot_of_day / axis.slots_per_day
    rate = 3.0 + 2.0 * np.sin(phase)[:, None] + np.arange(n_zones)[None, :]
    OD = gen.poisson(rate).astype(float)
    G = gen.binomial(OD.astype(int), 0.3).astype(float)
    fields = {"city": {"OD": OD, "D": OD - G, "G": G}}
    poi = np.arange(1, n_zones + 1, dtype=float)
    contexts = {"city": encode_contexts(axis, poi)}
    weather = {"city": np.stack([np.sin(phase), np.cos(phase)], axis=-1)}
    return axis, fields, contexts, weather


def micro_scenario(**kwargs) -> ScenarioConfig:
    """Сценарий, совпадающий с micro_fields: 3 зоны, 48 часовых интервалов"""
    values = dict(name="micro", kind="orders", n_zones=3, interval_minutes=60, start="2016-01-04", days=2,
                  lookback=2, tasks=[TaskSpec("a", "city", "OD"), TaskSpec("b", "city", "G")],
                  st_features=["OD", "D", "G"], weather_categories=[], weather_columns=["x", "y"])
    values.update(kwargs)
    return ScenarioConfig(**values)


def micro_sets(days: int = 2, n_zones: int = 3, lookback: int = 2, seed: int = 0):
    axis, fields, contexts, weather = micro_fields(days, n_zones, seed)
    split = SplitSpec.chronological(axis.n_slots)
    return make_samples(fields, contexts, weather, split, lookback, ["OD", "D", "G"],
                        {"a": ("city", "OD"), "b": ("city", "G")})


@pytest.fixture
def sample_sets():
    sets, _ = micro_sets()
    return sets
