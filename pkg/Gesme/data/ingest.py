"""
Чтение CSV и агрегирование в пространственно-временные поля

Поля хранятся как матрицы [T, N] (интервал × зона).

Схемы входных файлов:
    orders.csv      order_id, zone_id, ts, driver_id (пустой или null - невыполненный заказ)
    trajectory.csv  trip_id, ts, lat, lon
    weather.csv     ts, category, <непрерывные столбцы сценария>
    poi.csv         zone_id, poi_count
"""
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from ..exceptions import IngestError, create_gesme_error
from .partition import Grid, TimeAxis

logger = logging.getLogger(__name__)

ORDER_COLUMNS = ("order_id", "zone_id", "ts", "driver_id")
TRAJECTORY_COLUMNS = ("trip_id", "ts", "lat", "lon")
POI_COLUMNS = ("zone_id", "poi_count")
NULL_DRIVER = ("", "null", "none", "nan")

EARTH_RADIUS_KM = 6371.0088


@dataclass
class SpatioTemporalField:
    """Пространственно-временная переменная: values[t, z]"""
    name: str
    values: np.ndarray
    units: str = "count"


@dataclass
class FieldSet:
    """Результат агрегирования: поля по имени и счетчики отброшенных/заполненных записей"""
    fields: Dict[str, SpatioTemporalField]
    counters: Dict[str, int] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.fields[name].values

    def __contains__(self, name: str) -> bool:
        return name in self.fields

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: f.values for name, f in self.fields.items()}


def read_csv(path, columns: Sequence[str]) -> pd.DataFrame:
    """
    Читает CSV и проверяет схему

    :param path: Путь к файлу
    :param columns: Обязательные столбцы
    :raises IngestError: Нарушение схемы; номер строки указывается, если он известен
    """
    path = Path(path)
    if not path.exists():
        raise IngestError("файл не найден", str(path))
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        found = re.search(r"line (\d+)", str(e))
        raise create_gesme_error("ingest", f"нарушена структура CSV: {e}",
                                 {"path": str(path), "line": int(found.group(1)) if found else None})
    except pd.errors.EmptyDataError:
        raise IngestError("пустой файл", str(path))

    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise IngestError(f"нет столбцов {missing}, найдены {list(frame.columns)}", str(path), 1)
    return frame


def _line(row_index) -> int:
    # строка 1 - заголовок
    return int(row_index) + 2


def _parse_times(frame: pd.DataFrame, path: str) -> pd.Series:
    ts = pd.to_datetime(frame["ts"], errors="coerce")
    bad = ts.isna()
    if bad.any():
        first = bad.to_numpy().nonzero()[0][0]
        raise IngestError(f"нераспознанная метка времени '{frame['ts'].iloc[first]}'", path, _line(first))
    return ts


def _parse_numbers(frame: pd.DataFrame, column: str, path: str) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna()
    if bad.any():
        first = bad.to_numpy().nonzero()[0][0]
        raise IngestError(f"столбец {column}: не число '{frame[column].iloc[first]}'", path, _line(first))
    return values.to_numpy(dtype=float)


def check_order_invariants(D: np.ndarray, OD: np.ndarray, G: np.ndarray, source: str = "orders"):
    """D ≥ 0, D ≤ OD, 0 ≤ G ≤ OD для каждой ячейки"""
    violations = (D < 0) | (D > OD) | (G < 0) | (G > OD)
    if violations.any():
        t, z = np.argwhere(violations)[0]
        raise IngestError(f"нарушено D ≤ OD, 0 ≤ G ≤ OD в интервале {t}, зоне {z} "
                          f"(D={D[t, z]}, OD={OD[t, z]}, G={G[t, z]})", source)


def aggregate_orders(orders: pd.DataFrame, axis: TimeAxis, zones: Sequence[str],
                     path: str = "orders.csv") -> FieldSet:
    """
    OD - все заказы в (z, t), D - заказы с водителем, G = OD − D

    :param orders: Строки orders.csv
    :param axis: Временная ось
    :param zones: Идентификаторы зон в порядке индексов
    :param path: Имя источника для сообщений об ошибках
    :raises IngestError: Неизвестный идентификатор зоны
    """
    zone_index = pd.Index([str(z) for z in zones])
    zone_ids = orders["zone_id"].astype(str).str.strip()
    z = zone_index.get_indexer(zone_ids)
    if (z < 0).any():
        unknown = sorted(zone_ids[z < 0].unique())
        raise IngestError(f"неизвестные идентификаторы зон: {unknown[:10]}", path,
                          _line((z < 0).nonzero()[0][0]))

    t = axis.index_of(_parse_times(orders, path))
    inside = t >= 0
    out_of_span = int((~inside).sum())
    if out_of_span:
        logger.warning(f"{path}: {out_of_span} заказов вне периода сценария отброшено")

    matched = ~orders["driver_id"].astype(str).str.strip().str.lower().isin(NULL_DRIVER).to_numpy()
    shape = (axis.n_slots, len(zone_index))
    OD = np.zeros(shape)
    D = np.zeros(shape)
    np.add.at(OD, (t[inside], z[inside]), 1.0)
    np.add.at(D, (t[inside & matched], z[inside & matched]), 1.0)
    G = OD - D
    check_order_invariants(D, OD, G, path)

    logger.info(f"{path}: {int(OD.sum())} заказов, {int(G.sum())} без водителя")
    return FieldSet(
        {"OD": SpatioTemporalField("OD", OD), "D": SpatioTemporalField("D", D), "G": SpatioTemporalField("G", G)},
        {"orders_out_of_span": out_of_span})


def haversine_km(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Расстояние по большому кругу в километрах"""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=float)) for v in (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def aggregate_trajectories(points: pd.DataFrame, axis: TimeAxis, grid: Grid,
                           path: str = "trajectory.csv") -> FieldSet:
    """
    M - число различных поездок, пересекающих (z, t)
    S - среднее по поездкам отношение пройденного в зоне пути к времени в зоне, км/ч
    D - число начальных точек поездок в (z, t)
    speed_missing - 1, если в (z, t) нет ни одного измерения скорости (тогда S = 0)

    Отрезок между соседними точками поездки относится к (z, t) первой точки,
    если вторая точка лежит в той же зоне. Точки вне сетки или периода отбрасываются.

    :raises IngestError: Метки времени поездки убывают
    """
    ts = _parse_times(points, path)
    lat = _parse_numbers(points, "lat", path)
    lon = _parse_numbers(points, "lon", path)

    frame = pd.DataFrame({
        "trip": points["trip_id"].astype(str).to_numpy(),
        "ts": ts.to_numpy(),
        "row": np.arange(len(points)),
        "t": axis.index_of(ts),
        "z": grid.zone_of(lat, lon),
        "lat": lat,
        "lon": lon,
    })

    step = frame.groupby("trip", sort=False)["ts"].diff()
    backwards = (step < pd.Timedelta(0)).to_numpy()
    if backwards.any():
        first = backwards.nonzero()[0][0]
        raise IngestError(f"метки времени поездки {frame['trip'].iloc[first]} не монотонны", path, _line(first))

    shape = (axis.n_slots, grid.n_zones)
    valid = (frame["t"] >= 0) & (frame["z"] >= 0)
    dropped = int((frame["z"] < 0).sum())
    out_of_span = int(((frame["t"] < 0) & (frame["z"] >= 0)).sum())
    if dropped:
        logger.warning(f"{path}: {dropped} точек вне сетки отброшено")
    if out_of_span:
        logger.warning(f"{path}: {out_of_span} точек вне периода сценария отброшено")

    # Начальная точка каждой поездки (до фильтрации)
    starts = frame.groupby("trip", sort=False).head(1)
    starts = starts[(starts["t"] >= 0) & (starts["z"] >= 0)]
    D = np.zeros(shape)
    np.add.at(D, (starts["t"].to_numpy(), starts["z"].to_numpy()), 1.0)

    kept = frame[valid]
    crossings = kept.drop_duplicates(["trip", "t", "z"])
    M = np.zeros(shape)
    np.add.at(M, (crossings["t"].to_numpy(), crossings["z"].to_numpy()), 1.0)

    nxt = frame.groupby("trip", sort=False)[["ts", "z", "lat", "lon"]].shift(-1)
    segment = valid & (nxt["z"] == frame["z"]).to_numpy()
    segments = frame[segment].copy()
    following = nxt[segment]
    segments["km"] = haversine_km(segments["lat"], segments["lon"], following["lat"], following["lon"])
    segments["hours"] = (following["ts"] - segments["ts"]).dt.total_seconds().to_numpy() / 3600.0

    per_trip = segments.groupby(["trip", "t", "z"], sort=False)[["km", "hours"]].sum().reset_index()
    per_trip = per_trip[per_trip["hours"] > 0]
    per_trip["speed"] = per_trip["km"] / per_trip["hours"]
    cell_speed = per_trip.groupby(["t", "z"])["speed"].mean().reset_index()

    S = np.zeros(shape)
    observed = np.zeros(shape, dtype=bool)
    S[cell_speed["t"].to_numpy(), cell_speed["z"].to_numpy()] = cell_speed["speed"].to_numpy()
    observed[cell_speed["t"].to_numpy(), cell_speed["z"].to_numpy()] = True

    logger.info(f"{path}: {frame['trip'].nunique()} поездок, {len(kept)} точек в сетке")
    return FieldSet(
        {
            "M": SpatioTemporalField("M", M),
            "S": SpatioTemporalField("S", S, "km/h"),
            "D": SpatioTemporalField("D", D),
            "speed_missing": SpatioTemporalField("speed_missing", (~observed).astype(float), "flag"),
        },
        {"points_dropped_outside_grid": dropped, "points_out_of_span": out_of_span})


def read_poi(path, zones: Sequence[str]) -> np.ndarray:
    """Число POI по зонам [N]; зоны без строки получают 0"""
    frame = read_csv(path, POI_COLUMNS)
    zone_index = pd.Index([str(z) for z in zones])
    z = zone_index.get_indexer(frame["zone_id"].astype(str).str.strip())
    if (z < 0).any():
        first = (z < 0).nonzero()[0][0]
        raise IngestError(f"неизвестная зона '{frame['zone_id'].iloc[first]}'", str(path), _line(first))
    counts = _parse_numbers(frame, "poi_count", str(path))
    if (counts < 0).any():
        raise IngestError("отрицательное число POI", str(path))
    poi = np.zeros(len(zone_index))
    poi[z] = counts
    return poi


class WeatherEncoder:
    """
    Кодирование погоды: one-hot категории (в объявленном порядке) и
    стандартизованные непрерывные столбцы

    Статистики стандартизации берутся только из обучающего отрезка.
    Пропущенные интервалы заполняются предыдущим значением.
    """

    def __init__(self, categories: Sequence[str], columns: Sequence[str], logger=None):
        """
        :param categories: Категории погоды в порядке столбцов one-hot
        :param columns: Непрерывные столбцы (temp, pm, dew, humidity, cloud, wind, visibility)
        :param logger: Логгер (опционально)
        """
        self.categories = [str(c) for c in categories]
        self.columns = list(columns)
        self.scaler: Optional[StandardScaler] = None
        self.counters = {"weather_filled": 0, "weather_unseen": 0}
        self.logger = logger or logging.getLogger(self.__class__.__name__)

    @property
    def feature_names(self) -> List[str]:
        return [f"wc_{c}" for c in self.categories] + [f"wt_{c}" for c in self.columns]

    def align(self, rows: pd.DataFrame, axis: TimeAxis, path: str = "weather.csv") -> pd.DataFrame:
        """Одна строка на интервал; пропуски заполняются вперед (начальные - назад)"""
        missing = [c for c in ("ts", "category", *self.columns) if c not in rows.columns]
        if missing:
            raise IngestError(f"нет столбцов {missing}", path, 1)

        frame = pd.DataFrame({"t": axis.index_of(_parse_times(rows, path)),
                              "category": rows["category"].astype(str).str.strip()})
        for column in self.columns:
            frame[column] = _parse_numbers(rows, column, path)
        frame = frame[frame["t"] >= 0].drop_duplicates("t", keep="last").set_index("t")

        aligned = frame.reindex(np.arange(axis.n_slots))
        filled = int(aligned["category"].isna().sum())
        if filled == axis.n_slots:
            raise IngestError("нет ни одной записи погоды в периоде сценария", path)
        if filled:
            self.counters["weather_filled"] += filled
            self.logger.warning(f"{path}: {filled} интервалов без погоды заполнено предыдущим значением")
        return aligned.ffill().bfill()

    def fit(self, aligned: pd.DataFrame, train_slots: int) -> "WeatherEncoder":
        """Статистики стандартизации по первым train_slots интервалам"""
        self.scaler = StandardScaler()
        if self.columns:
            self.scaler.fit(aligned[self.columns].iloc[:train_slots].to_numpy())
        return self

    def transform(self, aligned: pd.DataFrame) -> np.ndarray:
        """[T, C + K]: one-hot категории и стандартизованные столбцы"""
        categories = aligned["category"].to_numpy()
        onehot = np.stack([(categories == c).astype(float) for c in self.categories], axis=-1) \
            if self.categories else np.zeros((len(aligned), 0))
        unseen = onehot.sum(axis=-1) == 0
        if unseen.any():
            names = sorted(set(categories[unseen]))
            self.counters["weather_unseen"] += int(unseen.sum())
            self.logger.warning(f"Неизвестные категории погоды {names} закодированы нулями")

        if not self.columns:
            return onehot
        if self.scaler is None:
            raise create_gesme_error("usage", "WeatherEncoder.transform вызван до fit")
        continuous = self.scaler.transform(aligned[self.columns].to_numpy())
        return np.concatenate([onehot, continuous], axis=-1)


def encode_weather(rows: pd.DataFrame, axis: TimeAxis, categories: Sequence[str], columns: Sequence[str],
                   train_slots: int, path: str = "weather.csv"):
    """
    Погодный блок по интервалам

    :return: (массив [T, F_w], имена признаков, счетчики)
    """
    encoder = WeatherEncoder(categories, columns)
    aligned = encoder.align(rows, axis, path)
    encoder.fit(aligned, train_slots)
    return encoder.transform(aligned), encoder.feature_names, dict(encoder.counters)
