"""
Метрики качества прогноза и отчеты о важности признаков

MAE, RMSE и модифицированный sMAPE считаются по всем парам (зона, интервал),
развернутым в n скалярных пар.
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd
from sklearn.metrics import mean_absolute_error, mean_squared_error

from .core import no_grad
from .data.samples import SampleSet
from .exceptions import DimensionError, UsageError

logger = logging.getLogger(__name__)

METRICS_CSV = "metrics.csv"
TEMPORAL_CSV = "temporal.csv"
SPATIAL_CSV = "spatial.csv"
WEIGHTS_CSV = "weights.csv"


def _pairs(O, A):
    O = np.asarray(O, dtype=np.float64).reshape(-1)
    A = np.asarray(A, dtype=np.float64).reshape(-1)
    if O.shape != A.shape:
        raise DimensionError("Формы прогноза и факта не совпадают", [O.shape, A.shape])
    if O.size == 0:
        raise UsageError("Метрика от пустого набора")
    return O, A


def mae(O, A) -> float:
    """(1/n) Σ |O_i − A_i|"""
    O, A = _pairs(O, A)
    return float(mean_absolute_error(A, O))


def rmse(O, A) -> float:
    """√((1/n) Σ (O_i − A_i)²)"""
    O, A = _pairs(O, A)
    return float(np.sqrt(mean_squared_error(A, O)))


def smape(O, A) -> float:
    """(1/n) Σ |O_i − A_i| / (|O_i| + |A_i| + 1)"""
    O, A = _pairs(O, A)
    return float(np.mean(np.abs(O - A) / (np.abs(O) + np.abs(A) + 1.0)))


@dataclass
class MetricSet:
    """Метрики одной задачи; time_s - доля времени обучения, приходящаяся на задачу"""
    mae: float
    rmse: float
    smape: float
    n: int
    time_s: float = 0.0

    @classmethod
    def compute(cls, O, A, time_s: float = 0.0) -> "MetricSet":
        O, A = _pairs(O, A)
        return cls(mae(O, A), rmse(O, A), smape(O, A), int(O.size), float(time_s))

    def to_dict(self) -> Dict[str, float]:
        return {"mae": self.mae, "rmse": self.rmse, "smape": self.smape, "n": self.n, "time_s": self.time_s}


def predict(model, sample_set: SampleSet, task: str, batch_size: int = 256) -> np.ndarray:
    """Нормализованный прогноз задачи для всех образцов отрезка [n, N]"""
    outputs = []
    with no_grad():
        for batch in sample_set.batches(batch_size):
            outputs.append(model.forward(batch, task).numpy())
    if not outputs:
        raise UsageError(f"Отрезок {sample_set.name} пуст")
    return np.concatenate(outputs, axis=0)


def evaluate(model, dataset, split: str = "test", train_time_s: Optional[float] = None,
             batch_size: int = 256) -> Dict[str, MetricSet]:
    """
    Метрики задач на прогнозах в исходных единицах

    Время обучения многозадачной модели делится поровну между задачами;
    без train_time_s в отчет идет время инференса, разделенное так же.

    :param model: GesmeNet
    :param dataset: Dataset со статистиками нормализации
    :param split: Отрезок (обычно test)
    :param train_time_s: Полное время обучения модели
    :raises UsageError: Нет статистик нормализации
    """
    sample_set = dataset.samples(split)
    started = time.perf_counter()
    predictions = {task: predict(model, sample_set, task, batch_size) for task in model.tasks}
    elapsed = train_time_s if train_time_s is not None else time.perf_counter() - started
    share = elapsed / len(model.tasks)

    results = {}
    for task, normalized in predictions.items():
        raw = dataset.inverse(task, normalized)
        results[task] = MetricSet.compute(raw, sample_set.raw_targets[task], share)
        logger.info(f"{task}: MAE={results[task].mae:.4f} RMSE={results[task].rmse:.4f} "
                    f"sMAPE={results[task].smape:.4f}")
    return results


def metrics_table(results: Dict[str, MetricSet], include_time: bool = True) -> pd.DataFrame:
    """Строки task, mae, rmse, smape и (если include_time) time_s"""
    columns = ["task", "mae", "rmse", "smape"] + (["time_s"] if include_time else [])
    rows = [{"task": task, **m.to_dict()} for task, m in results.items()]
    return pd.DataFrame(rows, columns=columns)


def write_metrics(results: Dict[str, MetricSet], path, include_time: bool = True) -> Path:
    """
    Таблица метрик в CSV

    Без time_s файл зависит только от параметров модели и данных,
    поэтому два запуска с одним зерном дают одинаковые байты.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metrics_table(results, include_time).to_csv(path, index=False, float_format="%.6f")
    return path


# Важность признаков

@dataclass
class ImportanceReport:
    """
    temporal - [b, F] взвешенные входы, усредненные по образцам и зонам
    spatial  - [N, F_st] взвешенные входы, усредненные по образцам и интервалам истории
    weights  - признаки по убыванию среднего |σ(W^(FI))|
    """
    temporal: pd.DataFrame
    spatial: pd.DataFrame
    weights: pd.DataFrame = field(default_factory=pd.DataFrame)

    def rank_of(self, feature: str) -> int:
        ranked = list(self.weights["feature"])
        return ranked.index(feature)

    def write(self, out_dir) -> Dict[str, str]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"temporal": out_dir / TEMPORAL_CSV, "spatial": out_dir / SPATIAL_CSV, "weights": out_dir / WEIGHTS_CSV}
        self.temporal.to_csv(paths["temporal"], float_format="%.6f")
        self.spatial.to_csv(paths["spatial"], float_format="%.6f")
        self.weights.to_csv(paths["weights"], index=False, float_format="%.6f")
        return {name: str(path) for name, path in paths.items()}


def feature_weights(model) -> pd.DataFrame:
    """Среднее |σ(W^(FI))| по каждому пространственно-временному и погодному признаку"""
    if "st" not in model.weighting:
        raise UsageError("Слои взвешивания признаков удалены: отчет о важности невозможен")
    rows = []
    st = np.abs(model.weighting["st"].weights())                       # [N, F, b]
    for i, name in enumerate(model.roster.st_features):
        rows.append({"feature": name, "block": "st", "mean_abs_weight": float(st[:, i, :].mean())})
    if "weather" in model.weighting:
        weather = np.abs(model.weighting["weather"].weights())         # [b, F_w]
        for i, name in enumerate(model.roster.weather_features):
            rows.append({"feature": name, "block": "weather", "mean_abs_weight": float(weather[:, i].mean())})
    frame = pd.DataFrame(rows).sort_values("mean_abs_weight", ascending=False, kind="stable")
    return frame.reset_index(drop=True)


def importance_report(model, sample_set: SampleSet, batch_size: int = 256) -> ImportanceReport:
    """
    Взвешенные входы слоев взвешивания, усредненные пространственно и по времени

    :param model: GesmeNet со слоями взвешивания
    :param sample_set: Отрезок, по которому усредняются входы
    :raises UsageError: Слои взвешивания удалены абляцией
    """
    weights = feature_weights(model)
    roster = model.roster
    b = roster.lookback
    st_sum = np.zeros((b, len(roster.st_features)))
    weather_sum = np.zeros((b, len(roster.weather_features)))
    zone_sum = np.zeros((roster.n_zones, len(roster.st_features)))
    count = 0

    with no_grad():
        for batch in sample_set.batches(batch_size):
            for source in batch.inputs:
                weighted = model.weighted_inputs(batch.inputs[source])
                st = weighted["st"].numpy()                            # [B, N, F, b]
                st_sum += st.sum(axis=(0, 1)).T / roster.n_zones
                zone_sum += st.sum(axis=(0, 3)) / b
                weather_sum += weighted["weather"].numpy().sum(axis=0)
                count += st.shape[0]
    if count == 0:
        raise UsageError(f"Отрезок {sample_set.name} пуст")

    lags = [f"t-{lag}" for lag in range(b, 0, -1)]
    temporal = pd.concat([
        pd.DataFrame(st_sum / count, index=lags, columns=roster.st_features),
        pd.DataFrame(weather_sum / count, index=lags, columns=roster.weather_features),
    ], axis=1)
    temporal.index.name = "lag"
    spatial = pd.DataFrame(zone_sum / count, index=pd.RangeIndex(roster.n_zones, name="zone"),
                           columns=roster.st_features)
    return ImportanceReport(temporal, spatial, weights)
