import copy
from dataclasses import asdict
from typing import Dict, List, Optional

from . import ops
from .config import ABLATION_BLOCKS, ModelConfig
from .core import Tensor
from .data.samples import FeatureRoster, InputBlock, SampleBatch
from .exceptions import ConfigError, DimensionError, UsageError
from .modules.base import BaseModule, GROUP_ARCHITECTURE, GROUP_WEIGHTING
from .modules.layers import DenseLayer, FeatureWeightingLayer
from .modules.moe import (ConvExpert, ConvRnnExpert, GateNetwork, GruExpert, MixtureLayer, MixtureStack,
                          ZoneGruExpert)

SHARING = {"multi": "multi_gate", "shared": "shared_gate", "none": "shared_bottom_single"}

# Контекстные столбцы перед башней: 3 столбца времени суток + 1 столбец дня недели
CONTEXT_WIDTH = 4


class GesmeNet(BaseModule):
    """
    GESME-Net: слои взвешивания признаков, четыре стека смесей экспертов
    (ConvRNN-ME, Conv-ME, ZoneDist(GRU)-ME, GRU-ME) и башни задач
    """

    def __init__(self, config: ModelConfig, roster: FeatureRoster, variant: str = "gesme", logger=None):
        """
        :param config: Гиперпараметры модели
        :param roster: Состав и формы входных признаков
        :param variant: Имя варианта (sm, sbsm, sesme, gesme) для отчетов и контрольных точек
        :param logger: Логгер (опционально)
        """
        super().__init__("", config.seed, logger)
        config.validate()
        if roster.n_zones != config.n_zones or roster.lookback != config.lookback:
            raise ConfigError(
                f"Состав признаков (N={roster.n_zones}, b={roster.lookback}) не совпадает с конфигурацией "
                f"(N={config.n_zones}, b={config.lookback})", "model.n_zones")
        missing = [task for task in config.tasks if task not in roster.task_sources]
        if missing:
            raise ConfigError(f"Для задач {missing} нет источника входных данных", "model.tasks")

        self.config = config
        self.roster = roster
        self.variant = variant
        self.tasks = list(config.tasks)
        self.sharing = SHARING[config.gate_sharing]

        N, B = config.n_zones, config.lookback
        F_st, F_w = len(roster.st_features), len(roster.weather_features)
        if F_st < 1:
            raise ConfigError("Нужен хотя бы один пространственно-временной признак", "scenario.st_features")
        for key in ("conv_filter_len", "convrnn_filter_len"):
            if getattr(config, key) > 2 * N - 1:
                raise ConfigError(f"{key}={getattr(config, key)} больше 2N−1 = {2 * N - 1}", f"model.{key}")

        self.weighting: Dict[str, FeatureWeightingLayer] = {}
        if config.has("weighting"):
            shapes = {"st": (N, F_st, B), "weather": (B, F_w), "cd": (N, 3), "cw": (N, 1), "cp": (N, 1)}
            for name, shape in shapes.items():
                if name == "weather" and F_w == 0:
                    continue
                self.weighting[name] = self.add_module(f"weighting_{name}", FeatureWeightingLayer(
                    shape, config.weighting_activation, config.weighting_gamma, seed=self.seed,
                    path=f"weighting_{name}"))

        self.blocks: Dict[str, MixtureStack] = {}
        self.block_widths: Dict[str, int] = {}
        builders = {
            "convrnn_me": self._build_convrnn_me,
            "conv_me": self._build_conv_me,
            "zonedist_gru_me": self._build_zonedist_gru_me,
            "gru_me": self._build_gru_me,
        }
        for name, builder in builders.items():
            if not config.has(name) or (name == "gru_me" and F_w == 0):
                continue
            self.blocks[name] = self.add_module(name, builder(F_st, F_w))

        self.tower_width = sum(self.block_widths.values()) + CONTEXT_WIDTH
        expected = self.expected_tower_width(config, F_w)
        if self.tower_width != expected:
            raise ConfigError(f"Ширина входа башни {self.tower_width} не равна ожидаемой {expected}")

        self.towers: Dict[str, DenseLayer] = {
            task: self.add_module(f"tower_{task}", DenseLayer(
                self.tower_width, 1, config.tower_activation, seed=self.seed, path=f"tower_{task}"))
            for task in self.tasks
        }
        self.audit_partition()
        self.logger.info(f"Построена модель {variant}: блоки {list(self.blocks)}, "
                         f"ширина башни {self.tower_width}, параметров {self.parameter_count()}")

    @staticmethod
    def expected_tower_width(config: ModelConfig, weather_width: int = 1) -> int:
        """Сумма ширин выходов сохраненных блоков + 4 контекстных столбца"""
        width = CONTEXT_WIDTH
        last = config.layers_per_block - 1
        if config.has("convrnn_me"):
            width += config.filters_for("convrnn_me", last)
        if config.has("conv_me"):
            width += config.filters_for("conv_me", last)
        if config.has("zonedist_gru_me"):
            width += config.gru_hidden
        if config.has("gru_me") and weather_width > 0:
            width += config.gru_hidden
        return width

    # Построение блоков

    def _mixture(self, path: str, expert_factory, gate_factory) -> MixtureLayer:
        return MixtureLayer(expert_factory, gate_factory, self.config.experts_per_layer, self.sharing,
                            self.tasks, seed=self.seed, path=path)

    def _build_convrnn_me(self, F_st: int, F_w: int) -> MixtureStack:
        cfg, N, B = self.config, self.config.n_zones, self.config.lookback
        layers, n_in = [], F_st
        for i in range(cfg.layers_per_block):
            n_out = cfg.filters_for("convrnn_me", i)
            layers.append(self._mixture(
                f"convrnn_me.{i}",
                lambda path, n_in=n_in, n_out=n_out: ConvRnnExpert(
                    n_in, n_out, cfg.convrnn_filter_len, cfg.convrnn_activation, seed=self.seed, path=path),
                lambda path, n_in=n_in: GateNetwork(
                    "convrnn_softmax", (N, n_in, B), cfg.experts_per_layer, cfg.gate_hidden,
                    filter_len=cfg.convrnn_filter_len, seed=self.seed, path=path)))
            n_in = n_out
        self.block_widths["convrnn_me"] = n_in
        return MixtureStack(layers, path="convrnn_me")

    def _build_conv_me(self, F_st: int, F_w: int) -> MixtureStack:
        cfg, N, B = self.config, self.config.n_zones, self.config.lookback
        layers, n_in = [], F_st * B + 1
        for i in range(cfg.layers_per_block):
            n_out = cfg.filters_for("conv_me", i)
            layers.append(self._mixture(
                f"conv_me.{i}",
                lambda path, n_in=n_in, n_out=n_out: ConvExpert(
                    n_in, n_out, cfg.conv_filter_len, cfg.conv_activation, seed=self.seed, path=path),
                lambda path, n_in=n_in: GateNetwork(
                    "dense_softmax", (N, n_in), cfg.experts_per_layer, seed=self.seed, path=path)))
            n_in = n_out
        self.block_widths["conv_me"] = n_in
        return MixtureStack(layers, path="conv_me")

    def _build_zonedist_gru_me(self, F_st: int, F_w: int) -> MixtureStack:
        cfg, N, B, H = self.config, self.config.n_zones, self.config.lookback, self.config.gru_hidden
        layers, n_in = [], F_st
        for i in range(cfg.layers_per_block):
            sequences = i < cfg.layers_per_block - 1
            layers.append(self._mixture(
                f"zonedist_gru_me.{i}",
                lambda path, n_in=n_in, sequences=sequences: ZoneGruExpert(
                    n_in, H, return_sequences=sequences, seed=self.seed, path=path),
                lambda path, n_in=n_in: GateNetwork(
                    "gru_softmax", (N, B, n_in), cfg.experts_per_layer, cfg.gate_hidden, zone_axis=True,
                    seed=self.seed, path=path)))
            n_in = H
        self.block_widths["zonedist_gru_me"] = H
        return MixtureStack(layers, path="zonedist_gru_me")

    def _build_gru_me(self, F_st: int, F_w: int) -> MixtureStack:
        cfg, B, H = self.config, self.config.lookback, self.config.gru_hidden
        layers, n_in = [], F_w
        for i in range(cfg.layers_per_block):
            sequences = i < cfg.layers_per_block - 1
            layers.append(self._mixture(
                f"gru_me.{i}",
                lambda path, n_in=n_in, sequences=sequences: GruExpert(
                    n_in, H, return_sequences=sequences, seed=self.seed, path=path),
                lambda path, n_in=n_in: GateNetwork(
                    "gru_softmax", (B, n_in), cfg.experts_per_layer, cfg.gate_hidden, seed=self.seed, path=path)))
            n_in = H
        self.block_widths["gru_me"] = H
        return MixtureStack(layers, path="gru_me")

    # Параметры

    def parameter_groups(self) -> Dict[str, List[str]]:
        """Разбиение параметров на W^(FI) и W^(A)"""
        groups = {GROUP_WEIGHTING: [], GROUP_ARCHITECTURE: []}
        for name, _, group in self.named_parameters():
            groups[group].append(name)
        return groups

    def audit_partition(self) -> Dict[str, List[str]]:
        """
        Проверяет, что каждый обучаемый тензор входит ровно в одну из групп W^(FI), W^(A)

        :raises ConfigError: Если разбиение не исчерпывающее или группы пересекаются
        """
        groups = self.parameter_groups()
        seen_ids, names = set(), set()
        for name, tensor, group in self.named_parameters():
            if id(tensor) in seen_ids or name in names:
                raise ConfigError(f"Параметр {name} зарегистрирован дважды")
            if group not in groups:
                raise ConfigError(f"Параметр {name} вне групп регуляризации")
            seen_ids.add(id(tensor))
            names.add(name)
        overlap = set(groups[GROUP_WEIGHTING]) & set(groups[GROUP_ARCHITECTURE])
        if overlap or len(names) != len(groups[GROUP_WEIGHTING]) + len(groups[GROUP_ARCHITECTURE]):
            raise ConfigError(f"Группы параметров пересекаются: {sorted(overlap)[:5]}")
        return groups

    # Прямой проход

    def _weight(self, name: str, X: Tensor) -> Tensor:
        layer = self.weighting.get(name)
        return layer(X) if layer is not None else X

    def weighted_inputs(self, block: InputBlock) -> Dict[str, Tensor]:
        """Входные блоки после слоев взвешивания (без взвешивания при его абляции)"""
        size = block.X_st.shape[0]
        N, B = self.config.n_zones, self.config.lookback
        expected = (size, N, len(self.roster.st_features), B)
        if block.X_st.shape != expected:
            raise DimensionError("Блок X_st не совпадает с конфигурацией", [block.X_st.shape, expected])
        if block.X_w.shape != (size, B, len(self.roster.weather_features)):
            raise DimensionError("Блок X_w не совпадает с конфигурацией",
                                 [block.X_w.shape, (size, B, len(self.roster.weather_features))])

        return {
            "st": self._weight("st", Tensor(block.X_st)),
            "weather": self._weight("weather", Tensor(block.X_w)),
            "cd": self._weight("cd", Tensor(block.CD)),
            "cw": self._weight("cw", Tensor(block.CW.reshape(size, N, 1))),
            "cp": self._weight("cp", Tensor(block.CP.reshape(size, N, 1))),
        }

    def features(self, batch: SampleBatch, task: str) -> Tensor:
        """Вход башни задачи: [batch, N, ширина башни]"""
        if task not in self.tasks:
            raise UsageError(f"Неизвестная задача '{task}', модель обучена для: {', '.join(self.tasks)}")
        inputs = self.weighted_inputs(batch.block_for(task))
        st = inputs["st"]
        size, N, F_st, B = st.shape
        parts = []

        if "convrnn_me" in self.blocks:
            states = self.blocks["convrnn_me"](st, task)
            parts.append(ops.select(states, -1, -1))
        if "conv_me" in self.blocks:
            flat = ops.reshape(ops.permute(st, (0, 1, 3, 2)), (size, N, B * F_st))
            parts.append(self.blocks["conv_me"](ops.concat([flat, inputs["cp"]], axis=-1), task))
        if "zonedist_gru_me" in self.blocks:
            parts.append(self.blocks["zonedist_gru_me"](ops.permute(st, (0, 1, 3, 2)), task))
        if "gru_me" in self.blocks:
            weather = self.blocks["gru_me"](inputs["weather"], task)
            parts.append(ops.repeat(weather, N, axis=1))

        parts.extend([inputs["cd"], inputs["cw"]])
        features = ops.concat(parts, axis=-1)
        if features.shape[-1] != self.tower_width:
            raise DimensionError("Ширина признаков не совпадает с башней", [features.shape, (self.tower_width,)])
        return features

    def forward(self, batch: SampleBatch, task: str) -> Tensor:
        """
        Прогноз O_t задачи: [batch, N]

        :param batch: Батч образцов
        :param task: Идентификатор задачи
        """
        features = self.features(batch, task)
        out = self.towers[task](features)
        return ops.reshape(out, out.shape[:-1])

    __call__ = forward

    def echo(self) -> dict:
        """Конфигурация для манифеста контрольной точки"""
        return {"variant": self.variant, "model": asdict(self.config), "roster": self.roster.to_dict()}


def build(config: ModelConfig, roster: FeatureRoster, logger=None) -> GesmeNet:
    """
    Детерминированная сборка GESME-Net по конфигурации

    :raises ConfigError: При недопустимой маске абляции или конфигурации
    """
    return GesmeNet(config, roster, variant="gesme" if config.gate_sharing == "multi" else "custom", logger=logger)


def build_variant(kind: str, config: ModelConfig, roster: FeatureRoster, task: Optional[str] = None,
                  logger=None) -> GesmeNet:
    """
    Сборка варианта модели

    sm    - один эксперт, без гейтов, одна задача
    sbsm  - один эксперт, без гейтов, башни всех задач (общая нижняя сеть)
    sesme - общий гейт для всех задач
    gesme - отдельные гейты задач

    :param kind: Вариант (sm, sbsm, sesme, gesme)
    :param config: Базовая конфигурация
    :param roster: Состав признаков
    :param task: Задача для SM-Net (если в config.tasks их несколько)
    """
    config = copy.deepcopy(config)
    kind = kind.lower()
    if kind == "sm":
        if task is not None:
            config.tasks = [task]
        if len(config.tasks) != 1:
            raise ConfigError(f"SM-Net обучается на одной задаче, передано {len(config.tasks)}", "model.tasks")
        config.experts_per_layer, config.gate_sharing = 1, "none"
    elif kind == "sbsm":
        config.experts_per_layer, config.gate_sharing = 1, "none"
    elif kind == "sesme":
        config.gate_sharing = "shared"
    elif kind == "gesme":
        config.gate_sharing = "multi"
    else:
        raise ConfigError(f"Неизвестный вариант модели '{kind}'", "variant")
    return GesmeNet(config, roster, variant=kind, logger=logger)


def ablation_variants() -> List[Optional[str]]:
    """Полная модель и пять вариантов с удалением одного блока"""
    return [None] + list(ABLATION_BLOCKS)
