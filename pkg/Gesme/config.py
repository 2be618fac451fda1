"""
Конфигурация сценариев, модели и обучения

Файл конфигурации - плоский текст `раздел.ключ = значение` с комментариями `#`;
списки перечисляются через запятую. Разделы: scenario, model, train, synth.
"""
import copy
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "GESME_OUTPUT_ROOT"

ABLATION_BLOCKS = ("weighting", "convrnn_me", "conv_me", "zonedist_gru_me", "gru_me")
EXPERT_BLOCKS = ABLATION_BLOCKS[1:]
GATE_SHARING = ("multi", "shared", "none")
VARIANTS = ("sm", "sbsm", "sesme", "gesme")


@dataclass
class TaskSpec:
    """Задача прогноза: какое поле какого источника (города) предсказывается"""
    name: str
    source: str
    field: str

    @classmethod
    def parse(cls, text: str) -> "TaskSpec":
        parts = [p.strip() for p in text.split(":")]
        if len(parts) != 3 or not all(parts):
            raise ConfigError(f"Задача должна иметь вид имя:источник:поле, получено '{text}'", "scenario.tasks")
        return cls(*parts)

    def __str__(self):
        return f"{self.name}:{self.source}:{self.field}"


@dataclass
class ScenarioConfig:
    """Пространственно-временное разбиение и состав признаков сценария"""
    name: str = "custom"
    kind: str = "orders"  # orders | trajectories
    n_zones: int = 4
    interval_minutes: int = 15
    start: str = "2016-01-01"
    days: int = 20
    lookback: int = 6
    tasks: List[TaskSpec] = field(default_factory=lambda: [TaskSpec("original_demand", "city", "OD"),
                                                           TaskSpec("gap", "city", "G")])
    st_features: List[str] = field(default_factory=lambda: ["OD", "D", "G"])
    weather_categories: List[str] = field(default_factory=lambda: ["sunny", "rainy", "cloudy"])
    weather_columns: List[str] = field(default_factory=lambda: ["temp", "pm", "humidity"])
    grid_rows: int = 2
    grid_cols: int = 2
    bbox: List[float] = field(default_factory=lambda: [30.60, 30.70, 104.00, 104.10])
    val_fraction: float = 0.15
    test_fraction: float = 0.15

    @property
    def slots_per_day(self) -> int:
        return 1440 // self.interval_minutes

    @property
    def sources(self) -> List[str]:
        seen = []
        for task in self.tasks:
            if task.source not in seen:
                seen.append(task.source)
        return seen

    @property
    def task_names(self) -> List[str]:
        return [t.name for t in self.tasks]

    def validate(self) -> "ScenarioConfig":
        if self.kind not in ("orders", "trajectories"):
            raise ConfigError(f"Неизвестный вид сценария '{self.kind}'", "scenario.kind")
        if self.interval_minutes <= 0 or 1440 % self.interval_minutes != 0:
            raise ConfigError(f"Интервал {self.interval_minutes} мин не делит сутки", "scenario.interval_minutes")
        if self.lookback < 1:
            raise ConfigError("lookback должен быть ≥ 1", "scenario.lookback")
        if self.n_zones < 1:
            raise ConfigError("Число зон должно быть ≥ 1", "scenario.n_zones")
        if not self.tasks:
            raise ConfigError("Список задач пуст", "scenario.tasks")
        if len(set(self.task_names)) != len(self.tasks):
            raise ConfigError("Имена задач повторяются", "scenario.tasks")
        for task in self.tasks:
            if task.field not in self.st_features:
                raise ConfigError(f"Поле задачи {task} отсутствует в составе признаков", "scenario.st_features")
        if self.kind == "trajectories" and self.grid_rows * self.grid_cols != self.n_zones:
            raise ConfigError("grid_rows × grid_cols должно равняться n_zones", "scenario.grid_rows")
        if not 0 < self.val_fraction + self.test_fraction < 1:
            raise ConfigError("Доли валидации и теста должны быть в (0, 1)", "scenario.val_fraction")
        return self


@dataclass
class ModelConfig:
    """Гиперпараметры GESME-Net со значениями по умолчанию"""
    tasks: List[str] = field(default_factory=lambda: ["original_demand", "gap"])
    n_zones: int = 4
    lookback: int = 6
    experts_per_layer: int = 2
    layers_per_block: int = 2
    conv_filters: List[int] = field(default_factory=lambda: [25, 50])
    conv_filter_len: int = 7
    convrnn_filters: List[int] = field(default_factory=lambda: [50, 100])
    convrnn_filter_len: int = 5
    gru_hidden: int = 4
    gate_hidden: int = 4
    gate_sharing: str = "multi"
    ablation: List[str] = field(default_factory=list)
    weighting_activation: str = "linear"
    weighting_gamma: float = 0.5
    conv_activation: str = "relu"
    convrnn_activation: str = "relu"
    tower_activation: str = "relu"
    seed: int = 0

    def filters_for(self, block: str, layer: int) -> int:
        """Число фильтров слоя; для слоев сверх списка повторяется последнее значение"""
        filters = self.conv_filters if block == "conv_me" else self.convrnn_filters
        return int(filters[min(layer, len(filters) - 1)])

    def has(self, block: str) -> bool:
        return block not in self.ablation

    def validate(self) -> "ModelConfig":
        if not self.tasks:
            raise ConfigError("Список задач пуст", "model.tasks")
        if len(set(self.tasks)) != len(self.tasks):
            raise ConfigError("Имена задач повторяются", "model.tasks")
        for key in ("n_zones", "lookback", "experts_per_layer", "layers_per_block", "gru_hidden", "gate_hidden"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} должен быть ≥ 1", f"model.{key}")
        for key in ("conv_filter_len", "convrnn_filter_len"):
            value = getattr(self, key)
            if value < 1 or value % 2 == 0:
                raise ConfigError(f"{key} должна быть нечетной и положительной, получено {value}", f"model.{key}")
        if not self.conv_filters or not self.convrnn_filters or min(self.conv_filters + self.convrnn_filters) < 1:
            raise ConfigError("Числа фильтров должны быть положительными", "model.conv_filters")
        if self.gate_sharing not in GATE_SHARING:
            raise ConfigError(f"gate_sharing должен быть одним из {GATE_SHARING}", "model.gate_sharing")
        if self.gate_sharing == "none" and self.experts_per_layer != 1:
            raise ConfigError("Без гейтов допускается только один эксперт на слой", "model.experts_per_layer")
        if self.weighting_gamma <= 0:
            raise ConfigError("weighting_gamma должна быть положительной", "model.weighting_gamma")

        unknown = sorted(set(self.ablation) - set(ABLATION_BLOCKS))
        if unknown:
            raise ConfigError(f"Неизвестные блоки в ablation: {unknown}", "model.ablation")
        if all(block in self.ablation for block in EXPERT_BLOCKS):
            raise ConfigError("Нельзя удалить все блоки смесей экспертов: не остается ни одного представления",
                              "model.ablation")
        return self


@dataclass
class TrainConfig:
    """Параметры обучения: Adam, ранняя остановка, регуляризация"""
    learning_rate: float = 0.001
    batch_size: int = 32
    alpha: float = 0.001
    beta: float = 0.001
    patience: int = 50
    max_epochs: int = 500
    clip_norm: float = 0.0  # 0 - без ограничения нормы градиента
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.learning_rate < 0:
            raise ConfigError("learning_rate не может быть отрицательным", "train.learning_rate")
        if self.batch_size < 1:
            raise ConfigError("batch_size должен быть ≥ 1", "train.batch_size")
        if self.patience < 1:
            raise ConfigError("patience должен быть ≥ 1", "train.patience")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs должен быть ≥ 1", "train.max_epochs")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha и beta не могут быть отрицательными", "train.alpha")
        if self.clip_norm < 0:
            raise ConfigError("clip_norm не может быть отрицательным", "train.clip_norm")
        return self


@dataclass
class SynthSpec:
    """Параметры синтетического сценария"""
    days: int = 20
    base_rate: float = 4.0
    daily_amplitude: float = 0.8
    weekend_factor: float = 0.75
    noise_scale: float = 0.15
    gap_low: float = 0.05
    gap_high: float = 0.45
    city_warp: float = 0.25
    noise_feature: bool = False
    seed: int = 0


@dataclass
class RunConfig:
    """Полная разрешенная конфигурация запуска"""
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["scenario"]["tasks"] = [str(t) for t in self.scenario.tasks]
        return data

    def sync(self) -> "RunConfig":
        """Согласует модель со сценарием (задачи, зоны, lookback)"""
        self.model.tasks = self.scenario.task_names
        self.model.n_zones = self.scenario.n_zones
        self.model.lookback = self.scenario.lookback
        return self

    def validate(self) -> "RunConfig":
        self.scenario.validate()
        self.model.validate()
        self.train.validate()
        return self


def _scenario_presets() -> Dict[str, ScenarioConfig]:
    return {
        "scenario1": ScenarioConfig(
            name="scenario1", kind="orders", n_zones=66, interval_minutes=10, start="2016-01-01", days=20,
            lookback=6,
            tasks=[TaskSpec("original_demand", "beijing", "OD"), TaskSpec("gap", "beijing", "G")],
            st_features=["OD", "D", "G"],
            weather_categories=["sunny", "cloudy", "rainy", "snowy", "foggy"],
            weather_columns=["temp", "pm"],
        ),
        "scenario2": ScenarioConfig(
            name="scenario2", kind="trajectories", n_zones=100, interval_minutes=15, start="2016-10-01", days=61,
            lookback=9,
            tasks=[TaskSpec("demand_chengdu", "chengdu", "D"), TaskSpec("demand_xian", "xian", "D")],
            st_features=["D", "S", "M", "speed_missing"],
            weather_categories=["clear", "cloudy", "rain", "fog"],
            weather_columns=["temp", "humidity", "visibility", "cloud", "wind"],
            grid_rows=10, grid_cols=10,
        ),
        "scenario-synth": ScenarioConfig(
            name="scenario-synth", kind="orders", n_zones=4, interval_minutes=15, start="2016-01-04", days=20,
            lookback=6,
            tasks=[TaskSpec("original_demand", "city", "OD"), TaskSpec("gap", "city", "G")],
            st_features=["OD", "D", "G"],
        ),
        "scenario-synth-cities": ScenarioConfig(
            name="scenario-synth-cities", kind="trajectories", n_zones=4, interval_minutes=15, start="2016-10-03",
            days=20, lookback=6,
            tasks=[TaskSpec("demand_chengdu", "chengdu", "D"), TaskSpec("demand_xian", "xian", "D")],
            st_features=["D", "S", "M", "speed_missing"],
            weather_columns=["temp", "humidity", "visibility"],
            grid_rows=2, grid_cols=2,
        ),
    }


PRESETS = ("table1", "scenario1", "scenario2", "scenario-synth", "scenario-synth-cities")


def preset(name: str) -> RunConfig:
    """
    Конфигурация по имени пресета

    table1 - гиперпараметры по умолчанию на синтетическом сценарии; остальные
    пресеты фиксируют разбиение сценария при тех же гиперпараметрах.
    """
    scenarios = _scenario_presets()
    if name == "table1":
        run = RunConfig(scenario=scenarios["scenario-synth"])
    elif name in scenarios:
        run = RunConfig(scenario=scenarios[name])
    else:
        raise ConfigError(f"Неизвестный пресет '{name}', доступны: {', '.join(PRESETS)}", "preset")
    return run.sync()


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """
    Разбор плоского текста `раздел.ключ = значение`

    :param text: Содержимое файла
    :param source: Имя источника для сообщений
    :return: Словарь полный_ключ -> строковое значение
    """
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: ожидается 'ключ = значение'", None)
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"{source}:{number}: ключ '{key}' должен иметь вид раздел.ключ", key)
        values[key] = value
    return values


def load_config_file(path) -> Dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Файл конфигурации не найден: {path}", "config")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def _coerce(key: str, value: str, current: Any) -> Any:
    try:
        if isinstance(current, bool):
            lowered = value.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return lowered in ("true", "1", "yes")
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, list):
            items = [item.strip() for item in value.split(",") if item.strip()]
            if key == "scenario.tasks":
                return [TaskSpec.parse(item) for item in items]
            sample = current[0] if current else ""
            if isinstance(sample, int):
                return [int(item) for item in items]
            if isinstance(sample, float):
                return [float(item) for item in items]
            return items
        return value
    except ValueError:
        raise ConfigError(f"Недопустимое значение для {key}: '{value}'", key)


def apply_overrides(run: RunConfig, values: Dict[str, str]) -> RunConfig:
    """
    Применяет значения ключей `раздел.ключ` к конфигурации

    :param run: Исходная конфигурация (не изменяется)
    :param values: Полный ключ -> строковое значение
    :return: Новая конфигурация
    """
    run = copy.deepcopy(run)
    for key, value in values.items():
        section_name, _, name = key.partition(".")
        section = getattr(run, section_name, None)
        if section is None or section_name not in ("scenario", "model", "train", "synth"):
            raise ConfigError(f"Неизвестный раздел конфигурации '{section_name}'", key)
        names = {f.name for f in fields(section)}
        if name not in names:
            raise ConfigError(f"Неизвестный ключ конфигурации '{key}'", key)
        setattr(section, name, _coerce(key, value, getattr(section, name)))
        logger.debug(f"Конфигурация: {key} = {value}")
    return run


def resolve(preset_name: Optional[str] = None, config_path=None,
            overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """
    Пресет -> файл конфигурации -> переопределения из командной строки

    Ключи model.tasks, model.n_zones и model.lookback всегда берутся из сценария.
    """
    run = preset(preset_name or "table1")
    if config_path:
        run = apply_overrides(run, load_config_file(config_path))
    if overrides:
        run = apply_overrides(run, overrides)
    return run.sync().validate()


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def model_config_from_dict(data: Dict[str, Any]) -> ModelConfig:
    names = {f.name for f in fields(ModelConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"Неизвестные ключи конфигурации модели: {sorted(unknown)}", "model")
    return ModelConfig(**data).validate()


def scenario_from_dict(data: Dict[str, Any]) -> ScenarioConfig:
    data = dict(data)
    data["tasks"] = [TaskSpec.parse(t) if isinstance(t, str) else TaskSpec(**t) for t in data.get("tasks", [])]
    return ScenarioConfig(**data).validate()

