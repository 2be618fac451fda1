from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigError, DimensionError
from .partition import TimeAxis

# Три 8-часовых периода суток: сон, пик, вне пика
DAY_PERIODS = ("sleep", "peak", "off_peak")


def repeat_zones(row: np.ndarray, n_zones: int) -> np.ndarray:
    """f_RZ: вектор длины M -> матрица N × M с одинаковыми строками"""
    row = np.asarray(row)
    if row.ndim != 1:
        raise DimensionError("f_RZ ожидает вектор", [row.shape])
    out = np.repeat(row[np.newaxis, :], n_zones, axis=0)
    assert (out == row).all()
    return out


def repeat_time(column: np.ndarray, n_slots: int) -> np.ndarray:
    """f_RT: вектор по зонам длины N -> матрица N × T, постоянная вдоль времени"""
    column = np.asarray(column)
    if column.ndim != 1:
        raise DimensionError("f_RT ожидает вектор", [column.shape])
    out = np.repeat(column[:, np.newaxis], n_slots, axis=1)
    assert (out == column[:, np.newaxis]).all()
    return out


@dataclass(frozen=True)
class Contexts:
    """
    Контекстные переменные по интервалам

    CD - [T, N, 3] one-hot периода суток
    CW - [T, N] 1 для выходных, 0 для будних
    CP - [T, N] число POI в зоне
    """
    CD: np.ndarray
    CW: np.ndarray
    CP: np.ndarray


def day_period(axis: TimeAxis) -> np.ndarray:
    """Номер 8-часового периода (0, 1, 2) каждого интервала"""
    if axis.slots_per_day % 3 != 0:
        raise ConfigError(f"Число интервалов в сутках ({axis.slots_per_day}) не делится на 3",
                          "scenario.interval_minutes")
    return axis.slot_of_day // (axis.slots_per_day // 3)


def encode_contexts(axis: TimeAxis, poi: np.ndarray) -> Contexts:
    """
    Контексты сценария

    :param axis: Временная ось
    :param poi: Число POI по зонам [N]
    :raises ConfigError: Если число интервалов в сутках не делится на 3
    """
    poi = np.asarray(poi, dtype=float)
    n_zones, T = poi.shape[0], axis.n_slots

    onehot = np.eye(3)[day_period(axis)]                                # [T, 3]
    CD = np.stack([repeat_zones(row, n_zones) for row in onehot])       # [T, N, 3]
    weekend = (axis.weekdays() >= 5).astype(float)                      # [T]
    CW = repeat_zones(weekend, n_zones).T                               # [T, N]
    CP = repeat_time(poi, T).T                                          # [T, N]
    return Contexts(CD, CW, CP)
