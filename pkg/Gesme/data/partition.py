from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from ..exceptions import ConfigError


@dataclass(frozen=True)
class TimeAxis:
    """
    Разбиение периода на T временных интервалов по m минут

    Интервалы нумеруются с нуля; интервал t соответствует дню t // slots_per_day
    и номеру в сутках t % slots_per_day.
    """
    start: pd.Timestamp
    days: int
    interval_minutes: int

    @property
    def slots_per_day(self) -> int:
        return 1440 // self.interval_minutes

    @property
    def n_slots(self) -> int:
        return self.days * self.slots_per_day

    def __len__(self):
        return self.n_slots

    @property
    def day(self) -> np.ndarray:
        return np.arange(self.n_slots) // self.slots_per_day

    @property
    def slot_of_day(self) -> np.ndarray:
        return np.arange(self.n_slots) % self.slots_per_day

    def timestamps(self) -> pd.DatetimeIndex:
        """Начало каждого интервала"""
        return pd.date_range(self.start, periods=self.n_slots, freq=f"{self.interval_minutes}min")

    def weekdays(self) -> np.ndarray:
        """День недели каждого интервала: 0 - понедельник, 6 - воскресенье"""
        return self.timestamps().dayofweek.to_numpy()

    def index_of(self, ts) -> np.ndarray:
        """
        Номера интервалов для меток времени; −1 для меток вне периода

        :param ts: Метки времени (Series, Index или массив datetime64)
        """
        ts = pd.to_datetime(pd.Series(ts)).to_numpy(dtype="datetime64[ns]")
        offset = (ts - self.start.to_datetime64()) // np.timedelta64(self.interval_minutes, "m")
        offset = offset.astype(np.int64)
        return np.where((offset >= 0) & (offset < self.n_slots), offset, -1)


def partition_time(start, days: int, interval_minutes: int) -> TimeAxis:
    """
    Временная ось сценария

    :param start: Начало периода (полночь первого дня)
    :param days: Число дней
    :param interval_minutes: Длина интервала в минутах; должна делить 1440
    :raises ConfigError: Если интервал не делит сутки
    """
    if interval_minutes <= 0 or 1440 % interval_minutes != 0:
        raise ConfigError(f"Интервал {interval_minutes} мин не делит сутки (1440 мин)", "scenario.interval_minutes")
    if days < 1:
        raise ConfigError(f"Число дней должно быть ≥ 1, получено {days}", "scenario.days")
    return TimeAxis(pd.Timestamp(start).normalize(), int(days), int(interval_minutes))


@dataclass(frozen=True)
class Grid:
    """Равномерная сетка rows × cols над прямоугольником широт/долгот; зона = row * cols + col"""
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    rows: int
    cols: int

    @classmethod
    def from_bbox(cls, bbox: Sequence[float], rows: int, cols: int) -> "Grid":
        lat_min, lat_max, lon_min, lon_max = (float(v) for v in bbox)
        if not (lat_min < lat_max and lon_min < lon_max) or rows < 1 or cols < 1:
            raise ConfigError(f"Недопустимая сетка: bbox={list(bbox)}, {rows}×{cols}", "scenario.bbox")
        return cls(lat_min, lat_max, lon_min, lon_max, int(rows), int(cols))

    @property
    def n_zones(self) -> int:
        return self.rows * self.cols

    def zone_of(self, lat, lon) -> np.ndarray:
        """Номер зоны для каждой точки; −1 для точек вне сетки"""
        lat, lon = np.asarray(lat, dtype=float), np.asarray(lon, dtype=float)
        row = np.floor((lat - self.lat_min) / (self.lat_max - self.lat_min) * self.rows).astype(np.int64)
        col = np.floor((lon - self.lon_min) / (self.lon_max - self.lon_min) * self.cols).astype(np.int64)
        inside = (row >= 0) & (row < self.rows) & (col >= 0) & (col < self.cols)
        return np.where(inside, row * self.cols + col, -1)

    def cell_bounds(self, zone: int):
        """(lat_lo, lat_hi, lon_lo, lon_hi) зоны"""
        row, col = divmod(int(zone), self.cols)
        dlat = (self.lat_max - self.lat_min) / self.rows
        dlon = (self.lon_max - self.lon_min) / self.cols
        return (self.lat_min + row * dlat, self.lat_min + (row + 1) * dlat,
                self.lon_min + col * dlon, self.lon_min + (col + 1) * dlon)
