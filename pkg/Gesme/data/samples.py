"""
Разбиение на обучающий/валидационный/тестовый отрезки, нормализация и сборка образцов

Образец для целевого интервала t содержит историю интервалов t−b … t−1 и
контексты интервала t. Окно образца целиком лежит внутри одного отрезка.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.preprocessing import MinMaxScaler

from ..exceptions import ConfigError, DimensionError, UsageError
from .features import Contexts

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
POI_FIELD = "poi"


@dataclass(frozen=True)
class SplitSpec:
    """Хронологические границы отрезков: train [0, train_end), val [train_end, val_end), test [val_end, T)"""
    train_end: int
    val_end: int
    n_slots: int

    @classmethod
    def chronological(cls, n_slots: int, val_fraction: float = 0.15, test_fraction: float = 0.15) -> "SplitSpec":
        """Последние ~30% интервалов делятся поровну между валидацией и тестом"""
        if not 0 < val_fraction + test_fraction < 1:
            raise ConfigError("Доли валидации и теста должны быть в (0, 1)", "scenario.val_fraction")
        n_test = int(round(n_slots * test_fraction))
        n_val = int(round(n_slots * val_fraction))
        return cls(n_slots - n_val - n_test, n_slots - n_test, n_slots).validate()

    def validate(self) -> "SplitSpec":
        if not 0 < self.train_end <= self.val_end <= self.n_slots:
            raise ConfigError(f"Недопустимые границы отрезков {self}", "split")
        return self

    def bounds(self, split: str) -> Tuple[int, int]:
        if split == "train":
            return 0, self.train_end
        if split == "val":
            return self.train_end, self.val_end
        if split == "test":
            return self.val_end, self.n_slots
        raise UsageError(f"Неизвестный отрезок '{split}', известны: {', '.join(SPLITS)}")

    def target_slots(self, split: str, lookback: int) -> np.ndarray:
        """Целевые интервалы отрезка, окно истории которых не выходит за его начало"""
        lo, hi = self.bounds(split)
        return np.arange(lo + lookback, hi)


class Normalizer:
    """Min-max нормализация по полям в [0, 1]; статистики только по обучающему отрезку"""

    def __init__(self, stats: Optional[Dict[str, Tuple[float, float]]] = None):
        self.stats: Dict[str, Tuple[float, float]] = dict(stats or {})
        self._scalers: Dict[str, MinMaxScaler] = {}

    @staticmethod
    def key(source: str, name: str) -> str:
        return f"{source}/{name}"

    def fit(self, key: str, train_values: np.ndarray) -> "Normalizer":
        values = np.asarray(train_values, dtype=float).reshape(-1, 1)
        if values.size == 0:
            raise ConfigError(f"Нет обучающих значений для нормализации {key}")
        scaler = MinMaxScaler().fit(values)
        self.stats[key] = (float(scaler.data_min_[0]), float(scaler.data_max_[0]))
        self._scalers[key] = scaler
        return self

    def scaler(self, key: str) -> MinMaxScaler:
        if key not in self.stats:
            raise UsageError(f"Нет статистик нормализации для {key}")
        if key not in self._scalers:
            lo, hi = self.stats[key]
            self._scalers[key] = MinMaxScaler().fit(np.array([[lo], [hi]]))
        return self._scalers[key]

    def transform(self, key: str, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return self.scaler(key).transform(values.reshape(-1, 1)).reshape(values.shape)

    def inverse(self, key: str, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return self.scaler(key).inverse_transform(values.reshape(-1, 1)).reshape(values.shape)

    def to_dict(self) -> Dict[str, List[float]]:
        return {key: [lo, hi] for key, (lo, hi) in sorted(self.stats.items())}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> "Normalizer":
        return cls({key: (float(v[0]), float(v[1])) for key, v in data.items()})


@dataclass(frozen=True)
class FeatureRoster:
    """Состав и формы входов модели"""
    n_zones: int
    lookback: int
    st_features: List[str]
    weather_features: List[str]
    task_sources: Dict[str, str]

    @property
    def sources(self) -> List[str]:
        return list(dict.fromkeys(self.task_sources.values()))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureRoster":
        return cls(int(data["n_zones"]), int(data["lookback"]), list(data["st_features"]),
                   list(data["weather_features"]), dict(data["task_sources"]))


@dataclass(frozen=True)
class InputBlock:
    """
    Входы одного источника (города)

    X_st - [batch, N, F_st, b], X_w - [batch, b, F_w],
    CD - [batch, N, 3], CW - [batch, N], CP - [batch, N]
    """
    X_st: np.ndarray
    X_w: np.ndarray
    CD: np.ndarray
    CW: np.ndarray
    CP: np.ndarray

    def take(self, index: np.ndarray) -> "InputBlock":
        return InputBlock(self.X_st[index], self.X_w[index], self.CD[index], self.CW[index], self.CP[index])

    def __len__(self):
        return self.X_st.shape[0]


@dataclass(frozen=True)
class SampleBatch:
    """Батч образцов: входы по источникам и цели A_t по задачам [batch, N]"""
    inputs: Dict[str, InputBlock]
    targets: Dict[str, np.ndarray]
    task_sources: Dict[str, str]
    slots: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def size(self) -> int:
        return len(next(iter(self.inputs.values())))

    @property
    def tasks(self) -> List[str]:
        return list(self.task_sources)

    def block_for(self, task: str) -> InputBlock:
        if task not in self.task_sources:
            raise UsageError(f"Неизвестная задача '{task}', в батче: {', '.join(self.task_sources)}")
        return self.inputs[self.task_sources[task]]

    def target_for(self, task: str) -> np.ndarray:
        if task not in self.targets:
            raise UsageError(f"В батче нет целей задачи '{task}'")
        return self.targets[task]


@dataclass
class SampleSet:
    """
    Все образцы одного отрезка

    targets - нормализованные цели, raw_targets - цели в исходных единицах
    """
    name: str
    slots: np.ndarray
    inputs: Dict[str, InputBlock]
    targets: Dict[str, np.ndarray]
    raw_targets: Dict[str, np.ndarray]
    task_sources: Dict[str, str]

    def __len__(self):
        return int(self.slots.shape[0])

    def batch(self, index: np.ndarray) -> SampleBatch:
        return SampleBatch(
            {source: block.take(index) for source, block in self.inputs.items()},
            {task: values[index] for task, values in self.targets.items()},
            self.task_sources,
            self.slots[index],
        )

    def full(self) -> SampleBatch:
        return self.batch(np.arange(len(self)))

    def batches(self, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[SampleBatch]:
        """
        Мини-батчи; при переданном rng порядок перемешивается

        :param batch_size: Размер батча (последний может быть меньше)
        :param rng: Генератор для перемешивания (None - хронологический порядок)
        """
        order = np.arange(len(self))
        if rng is not None:
            order = rng.permutation(order)
        for start in range(0, len(order), batch_size):
            yield self.batch(order[start:start + batch_size])


def window_view(values: np.ndarray, lookback: int) -> np.ndarray:
    """Окна истории по первой оси: [T, ...] -> [T − b + 1, ..., b]"""
    return sliding_window_view(values, lookback, axis=0)


def make_samples(fields: Dict[str, Dict[str, np.ndarray]], contexts: Dict[str, Contexts],
                 weather: Dict[str, np.ndarray], split: SplitSpec, lookback: int,
                 st_features: Sequence[str], task_fields: Dict[str, Tuple[str, str]],
                 normalizer: Optional[Normalizer] = None) -> Tuple[Dict[str, SampleSet], Normalizer]:
    """
    Образцы всех отрезков

    :param fields: Источник -> имя поля -> [T, N] в исходных единицах
    :param contexts: Источник -> контексты
    :param weather: Источник -> закодированная погода [T, F_w]
    :param split: Границы отрезков
    :param lookback: Глубина истории b
    :param st_features: Пространственно-временные признаки в порядке оси F_st
    :param task_fields: Задача -> (источник, поле цели)
    :param normalizer: Готовые статистики (None - вычислить по обучающему отрезку)
    :return: (отрезок -> SampleSet, нормализатор)
    """
    if lookback < 1:
        raise ConfigError("lookback должен быть ≥ 1", "scenario.lookback")
    sources = list(dict.fromkeys(source for source, _ in task_fields.values()))
    task_sources = {task: source for task, (source, _) in task_fields.items()}

    if normalizer is None:
        normalizer = Normalizer()
        for source in sources:
            for name in dict.fromkeys(list(st_features) + [f for s, f in task_fields.values() if s == source]):
                normalizer.fit(Normalizer.key(source, name), fields[source][name][:split.train_end])
            normalizer.fit(Normalizer.key(source, POI_FIELD), contexts[source].CP[:split.train_end])

    prepared = {}
    for source in sources:
        if source not in fields or source not in contexts or source not in weather:
            raise ConfigError(f"Нет данных источника '{source}'", "scenario.tasks")
        missing = [name for name in st_features if name not in fields[source]]
        if missing:
            raise ConfigError(f"Источник '{source}' не содержит признаков {missing}", "scenario.st_features")
        st = np.stack([normalizer.transform(Normalizer.key(source, name), fields[source][name])
                       for name in st_features], axis=-1)                       # [T, N, F]
        if st.shape[0] != split.n_slots:
            raise DimensionError("Длина полей не совпадает с временной осью", [st.shape, (split.n_slots,)])
        prepared[source] = (
            window_view(st, lookback),                                          # [T−b+1, N, F, b]
            np.swapaxes(window_view(weather[source], lookback), -1, -2),        # [T−b+1, b, F_w]
            normalizer.transform(Normalizer.key(source, POI_FIELD), contexts[source].CP),
        )

    sets = {}
    for name in SPLITS:
        slots = split.target_slots(name, lookback)
        history = slots - lookback
        inputs = {}
        for source in sources:
            st_windows, weather_windows, cp = prepared[source]
            ctx = contexts[source]
            inputs[source] = InputBlock(
                np.ascontiguousarray(st_windows[history]),
                np.ascontiguousarray(weather_windows[history]),
                ctx.CD[slots], ctx.CW[slots], cp[slots])

        raw, normed = {}, {}
        for task, (source, target) in task_fields.items():
            raw[task] = fields[source][target][slots]
            normed[task] = normalizer.transform(Normalizer.key(source, target), raw[task])

        sets[name] = SampleSet(name, slots, inputs, normed, raw, task_sources)
        logger.debug(f"Отрезок {name}: {len(slots)} образцов, интервалы {slots[:1]}…{slots[-1:]}")
    return sets, normalizer
