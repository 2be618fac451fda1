from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .. import ops
from ..core import Tensor, as_tensor
from ..exceptions import ConfigError, DimensionError, UsageError
from .base import BaseModule, uniform_init
from .layers import ConvRnnCell, DenseLayer, GruCell, zone_distributed_gru

GATE_KINDS = ("dense_softmax", "gru_softmax", "convrnn_softmax")
SHARING_MODES = ("multi_gate", "shared_gate", "shared_bottom_single")
SHARED_GATE_KEY = "shared"


# Эксперты

class ConvExpert(BaseModule):
    """Эксперт Conv-ME: act(Conv1D) по оси зон, [B, N, F] -> [B, N, K]"""

    def __init__(self, n_features: int, filters: int, filter_len: int, activation: str = "relu",
                 seed: int = 0, path: str = "conv", logger=None):
        super().__init__(path, seed, logger)
        if filters < 1:
            raise ConfigError(f"Число фильтров должно быть ≥ 1, получено {filters}", "conv_filters")
        if filter_len % 2 == 0:
            raise ConfigError(f"Длина фильтра должна быть нечетной, получено {filter_len}", "conv_filter_len")

        self.n_features = int(n_features)
        self.filters = int(filters)
        self.filter_len = int(filter_len)
        self._act = ops.activation(activation)

        rng = self.rng()
        F, K, L = self.n_features, self.filters, self.filter_len
        self.W = self.register_parameter("W", uniform_init(rng, (K, F, L), F * L, K * L))
        self.b = self.register_parameter("b", np.zeros(K))

    def forward(self, X: Tensor) -> Tensor:
        return self._act(ops.conv1d(X, self.W, self.b))

    __call__ = forward


class GruExpert(BaseModule):
    """Эксперт GRU-ME: [B, T, F] -> [B, H] (или [B, T, H] для промежуточных слоев)"""

    def __init__(self, n_features: int, hidden: int, return_sequences: bool = False,
                 seed: int = 0, path: str = "gru", logger=None):
        super().__init__(path, seed, logger)
        self.return_sequences = return_sequences
        self.cell = self.add_module("cell", GruCell(n_features, hidden, seed=seed, path=self.child_path("cell")))

    def forward(self, X: Tensor) -> Tensor:
        return self.cell.sequence(X, return_sequences=self.return_sequences)

    __call__ = forward


class ZoneGruExpert(GruExpert):
    """Эксперт ZoneDist(GRU)-ME: [B, N, T, F] -> [B, N, H]"""

    def forward(self, X: Tensor) -> Tensor:
        return zone_distributed_gru(self.cell, X, return_sequences=self.return_sequences)

    __call__ = forward


class ConvRnnExpert(BaseModule):
    """Эксперт ConvRNN-ME: [B, N, F, T] -> [B, N, K, T]"""

    def __init__(self, n_features: int, filters: int, filter_len: int, activation: str = "relu",
                 seed: int = 0, path: str = "convrnn", logger=None):
        super().__init__(path, seed, logger)
        self.cell = self.add_module("cell", ConvRnnCell(n_features, filters, filter_len, activation,
                                                        seed=seed, path=self.child_path("cell")))

    def forward(self, X: Tensor) -> Tensor:
        return self.cell.sequence(X)

    __call__ = forward


# Гейты

class GateNetwork(BaseModule):
    """
    Гейт: подсеть, выдающая softmax-распределение над m экспертами

    dense_softmax   - линейный слой по развернутому входу
    gru_softmax     - GRU по временной оси, последнее состояние (усредненное по зонам,
                      если у входа есть ось зон) -> линейный слой
    convrnn_softmax - ConvRNN, последний шаг усредняется по зонам -> линейный слой
    Вероятности вычисляются на образец, а не на зону.
    """

    def __init__(self, kind: str, input_shape: Sequence[int], n_experts: int, hidden: int = 4,
                 filter_len: int = 3, zone_axis: bool = False, seed: int = 0, path: str = "gate", logger=None):
        """
        :param kind: Вид гейта (dense_softmax, gru_softmax, convrnn_softmax)
        :param input_shape: Форма одного образца входа (без оси батча)
        :param n_experts: Число экспертов m
        :param hidden: Скрытые нейроны GRU или фильтры ConvRNN гейта
        :param filter_len: Длина фильтра ConvRNN гейта
        :param zone_axis: Есть ли у входа GRU-гейта ось зон перед временной осью
        """
        super().__init__(path, seed, logger)
        if kind not in GATE_KINDS:
            raise ConfigError(f"Неизвестный вид гейта '{kind}'", "gate_kind")
        if n_experts < 1:
            raise ConfigError(f"Число экспертов должно быть ≥ 1, получено {n_experts}", "experts_per_layer")

        self.kind = kind
        self.input_shape = tuple(input_shape)
        self.n_experts = int(n_experts)
        self.zone_axis = zone_axis

        if kind == "dense_softmax":
            width = int(np.prod(self.input_shape))
            self.head = self.add_module("head", DenseLayer(width, n_experts, seed=seed, path=self.child_path("head")))
        elif kind == "gru_softmax":
            self.cell = self.add_module("cell", GruCell(self.input_shape[-1], hidden, seed=seed,
                                                        path=self.child_path("cell")))
            self.head = self.add_module("head", DenseLayer(hidden, n_experts, seed=seed, path=self.child_path("head")))
        else:
            self.cell = self.add_module("cell", ConvRnnCell(self.input_shape[-2], hidden, filter_len, seed=seed,
                                                            path=self.child_path("cell")))
            self.head = self.add_module("head", DenseLayer(hidden, n_experts, seed=seed, path=self.child_path("head")))

    def logits(self, X: Tensor) -> Tensor:
        X = as_tensor(X)
        if X.shape[1:] != self.input_shape:
            raise DimensionError(f"{self.path}: форма входа не совпадает с гейтом", [X.shape, self.input_shape])
        batch = X.shape[0]

        if self.kind == "dense_softmax":
            features = ops.reshape(X, (batch, -1))
        elif self.kind == "gru_softmax":
            features = self.cell.sequence(X)
            if self.zone_axis:
                features = ops.reduce_mean(features, axis=1)
        else:
            states = self.cell.sequence(X)
            features = ops.reduce_mean(ops.select(states, -1, -1), axis=1)
        return self.head(features)

    def probs(self, X: Tensor) -> Tensor:
        """Вероятности экспертов [B, m]"""
        return ops.softmax(self.logits(X))

    __call__ = probs


def gate_probs(gate: GateNetwork, X: Tensor) -> Tensor:
    return gate.probs(X)


# Слой смеси экспертов

class MixtureLayer(BaseModule):
    """
    Смесь экспертов с гейтированием

    multi_gate           - отдельный гейт на каждую задачу
    shared_gate          - один гейт на все задачи
    shared_bottom_single - один эксперт без гейта (общая нижняя сеть)
    """

    def __init__(self, expert_factory: Callable[[str], BaseModule], gate_factory: Callable[[str], GateNetwork],
                 n_experts: int, sharing: str, tasks: Sequence[str], seed: int = 0, path: str = "mixture",
                 logger=None):
        """
        :param expert_factory: Функция path -> эксперт
        :param gate_factory: Функция path -> гейт
        :param n_experts: Число экспертов m
        :param sharing: Режим разделения гейтов
        :param tasks: Идентификаторы задач
        """
        super().__init__(path, seed, logger)
        if sharing not in SHARING_MODES:
            raise ConfigError(f"Неизвестный режим гейтирования '{sharing}'", "gate_sharing")
        if sharing == "shared_bottom_single" and n_experts != 1:
            raise ConfigError("Общая нижняя сеть допускает только одного эксперта", "experts_per_layer")
        if n_experts < 1:
            raise ConfigError(f"Число экспертов должно быть ≥ 1, получено {n_experts}", "experts_per_layer")

        self.sharing = sharing
        self.tasks = list(tasks)
        self.experts: List[BaseModule] = [
            self.add_module(f"expert{i}", expert_factory(self.child_path(f"expert{i}")))
            for i in range(n_experts)
        ]

        self.gates: Dict[str, GateNetwork] = {}
        if sharing == "multi_gate":
            for task in self.tasks:
                self.gates[task] = self.add_module(f"gate_{task}", gate_factory(self.child_path(f"gate_{task}")))
        elif sharing == "shared_gate":
            self.gates[SHARED_GATE_KEY] = self.add_module(
                "gate_shared", gate_factory(self.child_path("gate_shared")))

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    def gate_for(self, task: str) -> Optional[GateNetwork]:
        if task not in self.tasks:
            raise UsageError(f"Неизвестная задача '{task}', известны: {', '.join(self.tasks)}")
        if self.sharing == "multi_gate":
            return self.gates[task]
        if self.sharing == "shared_gate":
            return self.gates[SHARED_GATE_KEY]
        return None

    def probs(self, X: Tensor, task: str) -> Tensor:
        gate = self.gate_for(task)
        if gate is None:
            return Tensor(np.ones((as_tensor(X).shape[0], 1)))
        return gate.probs(X)

    def forward(self, X: Tensor, task: str) -> Tensor:
        """
        f_ME^p(X) = Σ_i f_gate^p(X)_i · f_expert^i(X)

        Вес гейта одинаков для всех осей выхода эксперта.
        """
        gate = self.gate_for(task)
        if gate is None:
            return self.experts[0](X)
        outputs = ops.stack([expert(X) for expert in self.experts], axis=1)
        return ops.mix(gate.probs(X), outputs)

    __call__ = forward

    def shared_bottom(self, X: Tensor) -> Tensor:
        """Y = f_shared(X): одинаковый для всех задач выход общей сети"""
        if self.sharing != "shared_bottom_single":
            raise UsageError(f"{self.path}: shared_bottom доступен только в режиме shared_bottom_single")
        return self.experts[0](X)


def mixture_forward(layer: MixtureLayer, task: str, X: Tensor) -> Tensor:
    return layer.forward(X, task)


def shared_bottom_forward(layer: MixtureLayer, X: Tensor) -> Tensor:
    return layer.shared_bottom(X)


class MixtureStack(BaseModule):
    """Последовательность слоев смеси; каждый слой гейтирует независимо по задаче"""

    def __init__(self, layers: Sequence[MixtureLayer], path: str = "stack", logger=None):
        super().__init__(path, 0, logger)
        self.layers = [self.add_module(str(i), layer) for i, layer in enumerate(layers)]

    def forward(self, X: Tensor, task: str) -> Tensor:
        return stack_mixtures(self.layers, task, X)

    __call__ = forward


def stack_mixtures(layers: Sequence[MixtureLayer], task: str, X: Tensor) -> Tensor:
    """
    Последовательное применение слоев смеси: гейт каждого следующего слоя
    получает выход предыдущего слоя
    """
    out = as_tensor(X)
    for layer in layers:
        out = layer.forward(out, task)
    return out
