"""
Каталог набора данных: поля, погода и POI по источникам, границы отрезков и
статистики нормализации

<dir>/dataset.manifest.json + <dir>/dataset.params (тот же формат, что у контрольных точек)
"""
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ..checkpoint import manifest_path, read_bundle, write_bundle
from ..config import ScenarioConfig, scenario_from_dict
from ..exceptions import ConfigError, CorruptCheckpointError, UsageError
from .features import Contexts, encode_contexts
from .ingest import (ORDER_COLUMNS, TRAJECTORY_COLUMNS, FieldSet, WeatherEncoder, aggregate_orders,
                     aggregate_trajectories, read_csv, read_poi)
from .partition import Grid, TimeAxis, partition_time
from .samples import FeatureRoster, Normalizer, SampleSet, SplitSpec, make_samples

DATASET_FORMAT = "gesme-dataset"
BUNDLE_NAME = "dataset"


class Dataset:
    """
    Предобработанный сценарий

    Все массивы хранятся в float32, поэтому запись и чтение каталога точны побитно.
    """

    def __init__(self, scenario: ScenarioConfig, fields: Dict[str, Dict[str, np.ndarray]],
                 weather: Dict[str, np.ndarray], weather_features: List[str], poi: Dict[str, np.ndarray],
                 split: Optional[SplitSpec] = None, normalizer: Optional[Normalizer] = None,
                 counters: Optional[Dict[str, int]] = None, logger=None):
        """
        :param scenario: Конфигурация сценария
        :param fields: Источник -> поле -> [T, N]
        :param weather: Источник -> [T, F_w]
        :param weather_features: Имена погодных признаков
        :param poi: Источник -> [N]
        :param split: Границы отрезков (по умолчанию 70/15/15 хронологически)
        :param normalizer: Статистики нормализации (по умолчанию по обучающему отрезку)
        :param counters: Счетчики загрузки
        """
        self.logger = logger or logging.getLogger(self.__class__.__name__)
        self.scenario = scenario
        self.axis: TimeAxis = partition_time(scenario.start, scenario.days, scenario.interval_minutes)
        self.fields = {s: {k: np.asarray(v, dtype=np.float32) for k, v in f.items()} for s, f in fields.items()}
        self.weather = {s: np.asarray(v, dtype=np.float32) for s, v in weather.items()}
        self.weather_features = list(weather_features)
        self.poi = {s: np.asarray(v, dtype=np.float32) for s, v in poi.items()}
        self.split = split or SplitSpec.chronological(self.axis.n_slots, scenario.val_fraction,
                                                      scenario.test_fraction)
        self.counters = dict(counters or {})
        self._normalizer = normalizer
        self._samples: Optional[Dict[str, SampleSet]] = None

        for source in scenario.sources:
            if source not in self.fields:
                raise ConfigError(f"В наборе нет источника '{source}'", "scenario.tasks")
            for name, values in self.fields[source].items():
                if values.shape != (self.axis.n_slots, scenario.n_zones):
                    raise ConfigError(f"Поле {source}/{name} формы {values.shape}, ожидается "
                                      f"{(self.axis.n_slots, scenario.n_zones)}", "scenario")

    @property
    def sources(self) -> List[str]:
        return self.scenario.sources

    def add_field(self, name: str, values: Dict[str, np.ndarray]):
        """Добавляет пространственно-временное поле ко всем источникам"""
        for source in self.sources:
            self.fields[source][name] = np.asarray(values[source], dtype=np.float32)
        if name not in self.scenario.st_features:
            self.scenario.st_features = list(self.scenario.st_features) + [name]
        self._normalizer, self._samples = None, None

    def contexts(self, source: str) -> Contexts:
        return encode_contexts(self.axis, self.poi[source])

    def roster(self) -> FeatureRoster:
        return FeatureRoster(self.scenario.n_zones, self.scenario.lookback, list(self.scenario.st_features),
                             list(self.weather_features), {t.name: t.source for t in self.scenario.tasks})

    def _build(self):
        sets, normalizer = make_samples(
            self.fields, {s: self.contexts(s) for s in self.sources}, self.weather, self.split,
            self.scenario.lookback, self.scenario.st_features,
            {t.name: (t.source, t.field) for t in self.scenario.tasks}, self._normalizer)
        self._samples, self._normalizer = sets, normalizer

    @property
    def normalizer(self) -> Normalizer:
        if self._normalizer is None:
            self._build()
        return self._normalizer

    def samples(self, split: str) -> SampleSet:
        """Образцы отрезка train, val или test"""
        if self._samples is None:
            self._build()
        if split not in self._samples:
            raise UsageError(f"Неизвестный отрезок '{split}'")
        return self._samples[split]

    def inverse(self, task: str, values: np.ndarray) -> np.ndarray:
        """Прогноз задачи в исходных единицах"""
        spec = next((t for t in self.scenario.tasks if t.name == task), None)
        if spec is None:
            raise UsageError(f"Неизвестная задача '{task}'")
        return self.normalizer.inverse(Normalizer.key(spec.source, spec.field), values)

    # Запись и чтение

    def arrays(self):
        for source in self.sources:
            for name in sorted(self.fields[source]):
                yield f"{source}/field/{name}", self.fields[source][name]
            yield f"{source}/weather", self.weather[source]
            yield f"{source}/poi", self.poi[source]

    def save(self, directory) -> Path:
        """
        Записывает каталог набора данных

        :return: Путь манифеста
        """
        directory = Path(directory)
        scenario = asdict(self.scenario)
        scenario["tasks"] = [str(t) for t in self.scenario.tasks]
        header = {
            "format": DATASET_FORMAT,
            "scenario": scenario,
            "split": {"train_end": self.split.train_end, "val_end": self.split.val_end,
                      "n_slots": self.split.n_slots},
            "normalization": self.normalizer.to_dict(),
            "weather_features": self.weather_features,
            "counters": self.counters,
        }
        write_bundle(directory / BUNDLE_NAME, self.arrays(), header)
        path = manifest_path(directory / BUNDLE_NAME)
        self.logger.info(f"Набор данных записан: {path}")
        return path

    @classmethod
    def load(cls, directory, logger=None) -> "Dataset":
        """
        Читает каталог набора данных

        :raises UsageError: Нет манифеста или статистик нормализации
        """
        prefix = Path(directory) / BUNDLE_NAME
        if not manifest_path(prefix).exists():
            raise UsageError(f"Нет манифеста набора данных в {directory}")
        manifest, arrays = read_bundle(prefix)
        if manifest.get("format") != DATASET_FORMAT:
            raise CorruptCheckpointError("Каталог не является набором данных", str(manifest_path(prefix)))
        if not manifest.get("normalization"):
            raise UsageError(f"В манифесте {manifest_path(prefix)} нет статистик нормализации")

        scenario = scenario_from_dict(manifest["scenario"])
        fields: Dict[str, Dict[str, np.ndarray]] = {s: {} for s in scenario.sources}
        weather, poi = {}, {}
        for key, values in arrays.items():
            source, kind, *rest = key.split("/")
            if kind == "field":
                fields[source][rest[0]] = values
            elif kind == "weather":
                weather[source] = values
            elif kind == "poi":
                poi[source] = values

        split = SplitSpec(**manifest["split"]).validate()
        return cls(scenario, fields, weather, manifest["weather_features"], poi, split,
                   Normalizer.from_dict(manifest["normalization"]), manifest.get("counters"), logger)


def preprocess(scenario: ScenarioConfig, inputs, logger=None) -> Dataset:
    """
    Сборка набора данных из CSV

    Для каждого источника <inputs>/<source>/ содержит orders.csv (сценарий orders) или
    trajectory.csv (сценарий trajectories), а также weather.csv и poi.csv.

    :param scenario: Конфигурация сценария
    :param inputs: Каталог входных CSV
    :raises IngestError: Нарушение схемы или инвариантов
    """
    log = logger or logging.getLogger("preprocess")
    scenario.validate()
    axis = partition_time(scenario.start, scenario.days, scenario.interval_minutes)
    split = SplitSpec.chronological(axis.n_slots, scenario.val_fraction, scenario.test_fraction)
    zones = [str(z) for z in range(scenario.n_zones)]

    fields, weather, poi, counters = {}, {}, {}, {}
    weather_features: List[str] = []
    for source in scenario.sources:
        folder = Path(inputs) / source
        if scenario.kind == "orders":
            path = folder / "orders.csv"
            fieldset: FieldSet = aggregate_orders(read_csv(path, ORDER_COLUMNS), axis, zones, str(path))
        else:
            path = folder / "trajectory.csv"
            grid = Grid.from_bbox(scenario.bbox, scenario.grid_rows, scenario.grid_cols)
            fieldset = aggregate_trajectories(read_csv(path, TRAJECTORY_COLUMNS), axis, grid, str(path))

        needed = set(scenario.st_features) | {t.field for t in scenario.tasks if t.source == source}
        missing = sorted(needed - set(fieldset.fields))
        if missing:
            raise ConfigError(f"Сценарий {scenario.kind} не дает признаков {missing}", "scenario.st_features")
        fields[source] = fieldset.arrays()

        encoder = WeatherEncoder(scenario.weather_categories, scenario.weather_columns)
        wpath = folder / "weather.csv"
        aligned = encoder.align(read_csv(wpath, ("ts", "category", *scenario.weather_columns)), axis, str(wpath))
        weather[source] = encoder.fit(aligned, split.train_end).transform(aligned)
        weather_features = encoder.feature_names

        poi[source] = read_poi(folder / "poi.csv", zones)
        for name, value in {**fieldset.counters, **encoder.counters}.items():
            counters[f"{source}/{name}"] = int(value)

    for name, value in sorted(counters.items()):
        log.info(f"Счетчик {name}: {value}")
    return Dataset(scenario, fields, weather, weather_features, poi, split, counters=counters, logger=logger)
