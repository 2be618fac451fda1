"""
Синтетический сценарий для проверок на настольном масштабе

Спрос - Пуассон с интенсивностью λ[t, z] = база зоны · суточная синусоида ·
коэффициент выходных · (1 + шум); разрыв G - биномиальная доля спроса с
вероятностью, растущей с базой зоны. Второй и следующие города - сдвиг по
времени и плавное искажение по зонам первого города. Генератор пишет сырые CSV,
после чего они проходят обычную предобработку.
"""
import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd

from ..config import ScenarioConfig, SynthSpec
from .dataset import Dataset, preprocess
from .partition import Grid, TimeAxis, partition_time

logger = logging.getLogger(__name__)

NOISE_FIELD = "noise"
TS_FORMAT = "%Y-%m-%d %H:%M:%S"
RAIN_BOOST = 1.2


def zone_bases(n_zones: int, spec: SynthSpec) -> np.ndarray:
    """База интенсивности зон: base_rate · e^u, u равномерно в [−0.5, 0.5]"""
    return spec.base_rate * np.exp(np.linspace(-0.5, 0.5, n_zones))


def weather_track(axis: TimeAxis, scenario: ScenarioConfig, rng: np.random.Generator) -> pd.DataFrame:
    """Погода по интервалам: липкая марковская цепь категорий и синусоиды с шумом"""
    T = axis.n_slots
    categories = scenario.weather_categories
    state = np.zeros(T, dtype=int)
    switches = rng.random(T) < 0.1
    jumps = rng.integers(0, max(1, len(categories)), size=T)
    for t in range(1, T):
        state[t] = jumps[t] if switches[t] else state[t - 1]

    phase = 2 * np.pi * axis.slot_of_day / axis.slots_per_day
    frame = pd.DataFrame({
        "ts": axis.timestamps().strftime(TS_FORMAT),
        "category": np.asarray(categories, dtype=object)[state] if categories else "",
    })
    for j, column in enumerate(scenario.weather_columns):
        frame[column] = np.round(10 + 5 * np.sin(phase + j) + rng.normal(0, 1, T), 3)
    return frame


def demand_rates(axis: TimeAxis, scenario: ScenarioConfig, spec: SynthSpec, rng: np.random.Generator,
                 weather: Optional[pd.DataFrame] = None) -> np.ndarray:
    """Интенсивность спроса λ [T, N] первого города"""
    phase = 2 * np.pi * axis.slot_of_day / axis.slots_per_day
    daily = 1.0 - spec.daily_amplitude * np.cos(phase)
    weekday = np.where(axis.weekdays() >= 5, spec.weekend_factor, 1.0)
    noise = rng.normal(0.0, spec.noise_scale, size=(axis.n_slots, scenario.n_zones))
    rate = zone_bases(scenario.n_zones, spec)[None, :] * (daily * weekday)[:, None] * (1.0 + noise)
    if weather is not None and len(scenario.weather_categories) > 1:
        rainy = (weather["category"] == scenario.weather_categories[1]).to_numpy()
        rate = rate * np.where(rainy, RAIN_BOOST, 1.0)[:, None]
    return np.clip(rate, 0.0, None)


def warp_rates(rate: np.ndarray, axis: TimeAxis, spec: SynthSpec, index: int) -> np.ndarray:
    """Интенсивность города с номером index: сдвиг на index часов и плавное искажение по зонам"""
    if index == 0:
        return rate
    shift = index * max(1, axis.slots_per_day // 24)
    n_zones = rate.shape[1]
    factor = 1.0 + spec.city_warp * np.sin(2 * np.pi * (np.arange(n_zones) + index) / max(2, n_zones))
    return np.roll(rate, -shift, axis=0) * factor[None, :]


def gap_probabilities(n_zones: int, spec: SynthSpec) -> np.ndarray:
    """Вероятность невыполненного заказа растет с базой зоны"""
    if n_zones == 1:
        return np.array([spec.gap_low])
    return spec.gap_low + (spec.gap_high - spec.gap_low) * np.arange(n_zones) / (n_zones - 1)


def _cells(counts: np.ndarray):
    """Индексы (t, z), повторенные по числу событий в ячейке"""
    t, z = np.nonzero(counts)
    n = counts[t, z].astype(np.int64)
    return np.repeat(t, n), np.repeat(z, n)


def orders_frame(axis: TimeAxis, OD: np.ndarray, G: np.ndarray, rng: np.random.Generator) -> pd.DataFrame:
    """Строки orders.csv; первые G заказов ячейки без водителя"""
    t, z = _cells(OD)
    start = np.concatenate([[0], np.cumsum(OD[OD > 0].astype(np.int64))[:-1]]) if t.size else np.zeros(0, int)
    rank = np.arange(t.size) - np.repeat(start, OD[OD > 0].astype(np.int64))
    unmatched = rank < G[t, z]

    seconds = rng.integers(0, axis.interval_minutes * 60, size=t.size)
    ts = axis.timestamps()[t] + pd.to_timedelta(seconds, unit="s")
    order_id = np.arange(t.size)
    driver = np.where(unmatched, "", np.char.add("d", (order_id % 997).astype(str)))
    return pd.DataFrame({
        "order_id": [f"o{i}" for i in order_id],
        "zone_id": z.astype(str),
        "ts": ts.strftime(TS_FORMAT),
        "driver_id": driver,
    })


def trajectory_frame(axis: TimeAxis, grid: Grid, D: np.ndarray, rng: np.random.Generator,
                     through_share: float = 0.5) -> pd.DataFrame:
    """
    Строки trajectory.csv

    Поездки спроса начинаются в зоне и делают два отрезка по 60 с внутри нее;
    транзитные поездки начинаются за пределами сетки и затем проходят через зону.
    """
    through = rng.poisson(through_share * D)
    rows = []
    trip = 0
    for counts, transit in ((D, False), (through, True)):
        t, z = _cells(counts)
        n = t.size
        if n == 0:
            continue
        bounds = np.array([grid.cell_bounds(zone) for zone in z])       # [n, 4]
        lat_lo, lat_hi, lon_lo, lon_hi = bounds.T
        margin_lat = (lat_hi - lat_lo) * 0.25
        margin_lon = (lon_hi - lon_lo) * 0.25
        lat0 = rng.uniform(lat_lo + margin_lat, lat_hi - margin_lat)
        lon0 = rng.uniform(lon_lo + margin_lon, lon_hi - margin_lon)
        speed_kmh = rng.uniform(15.0, 45.0, size=n)
        step_deg = speed_kmh / 60.0 / 111.195                              # 60 с пути по широте
        step_deg = np.minimum(step_deg, margin_lat / 2.0)
        start = axis.timestamps()[t] + pd.to_timedelta(
            rng.integers(0, max(1, axis.interval_minutes * 60 - 180), size=n), unit="s")
        ids = np.array([f"r{trip + i}" for i in range(n)])
        trip += n

        if transit:
            rows.append(pd.DataFrame({"trip_id": ids, "ts": start, "lat": np.full(n, grid.lat_min - 0.01),
                                      "lon": lon0}))
            start = start + pd.to_timedelta(60, unit="s")
        for k in range(3):
            rows.append(pd.DataFrame({"trip_id": ids, "ts": start + pd.to_timedelta(60 * k, unit="s"),
                                      "lat": lat0 + k * step_deg, "lon": lon0}))

    if not rows:
        return pd.DataFrame(columns=["trip_id", "ts", "lat", "lon"])
    frame = pd.concat(rows, ignore_index=True)
    frame = frame.sort_values(["trip_id", "ts"], kind="stable").reset_index(drop=True)
    frame["ts"] = frame["ts"].dt.strftime(TS_FORMAT)
    frame["lat"] = frame["lat"].round(7)
    frame["lon"] = frame["lon"].round(7)
    return frame


def write_raw(scenario: ScenarioConfig, spec: SynthSpec, inputs) -> Dict[str, Dict[str, np.ndarray]]:
    """
    Пишет сырые CSV сценария в <inputs>/<source>/

    :return: Источник -> сгенерированные поля [T, N] (для проверок)
    """
    rng = np.random.default_rng(spec.seed)
    axis = partition_time(scenario.start, spec.days, scenario.interval_minutes)
    weather = weather_track(axis, scenario, rng)
    base_rate = demand_rates(axis, scenario, spec, rng, weather)
    bases = zone_bases(scenario.n_zones, spec)

    generated = {}
    for index, source in enumerate(scenario.sources):
        folder = Path(inputs) / source
        folder.mkdir(parents=True, exist_ok=True)
        rate = warp_rates(base_rate, axis, spec, index)
        demand = rng.poisson(rate).astype(float)

        if scenario.kind == "orders":
            G = rng.binomial(demand.astype(np.int64), gap_probabilities(scenario.n_zones, spec)[None, :]).astype(float)
            orders_frame(axis, demand, G, rng).to_csv(folder / "orders.csv", index=False)
            generated[source] = {"OD": demand, "G": G, "D": demand - G}
        else:
            grid = Grid.from_bbox(scenario.bbox, scenario.grid_rows, scenario.grid_cols)
            trajectory_frame(axis, grid, demand, rng).to_csv(folder / "trajectory.csv", index=False)
            generated[source] = {"D": demand}

        kept = rng.random(axis.n_slots) >= 0.01
        kept[0] = True
        weather[kept].to_csv(folder / "weather.csv", index=False)
        poi = np.round(20 * bases / spec.base_rate).astype(int) + rng.poisson(3, size=scenario.n_zones)
        pd.DataFrame({"zone_id": np.arange(scenario.n_zones).astype(str), "poi_count": poi}) \
            .to_csv(folder / "poi.csv", index=False)
        logger.info(f"Синтетический источник {source}: {int(demand.sum())} событий спроса за {spec.days} дн.")
    return generated


def synth_generate(scenario: ScenarioConfig, spec: SynthSpec, out_dir, logger=None) -> Dataset:
    """
    Полный синтетический сценарий на диске

    <out_dir>/inputs/<source>/*.csv - сырые CSV
    <out_dir>/dataset/              - предобработанный набор

    При spec.noise_feature к признакам добавляется поле noise с i.i.d. U(0, 1)
    значениями, не связанное с целями.
    """
    log = logger or logging.getLogger("synth")
    out_dir = Path(out_dir)
    scenario = replace(scenario, days=spec.days)
    write_raw(scenario, spec, out_dir / "inputs")
    dataset = preprocess(scenario, out_dir / "inputs", logger=logger)

    if spec.noise_feature:
        rng = np.random.default_rng([spec.seed, 1])
        shape = (dataset.axis.n_slots, scenario.n_zones)
        dataset.add_field(NOISE_FIELD, {source: rng.random(shape) for source in dataset.sources})
        log.info(f"Добавлен шумовой признак '{NOISE_FIELD}'")

    dataset.save(out_dir / "dataset")
    return dataset
