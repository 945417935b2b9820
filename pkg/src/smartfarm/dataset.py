"""Synthetic animal-monitoring tables in the EVD column layout, and their ingestion."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .world import FarmConfig, VitalParams, harvest_joules, init_world, sample_all_vitals, step_movement

EVD_COLUMNS = ("serial", "hr", "avg_temp", "min_temp", "max_temp", "avg_activity", "battery_level", "timestamp")
EPOCH_START = 1_700_000_000
TEMP_SPREAD = 0.1  # std of the within-interval min/max excursion, Celsius


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class AnimalDistribution:
    serial: int
    n: int
    temp_mean: float
    temp_std: float
    hr_mean: float
    hr_std: float
    activity_mean: float
    activity_std: float

    def vital_params(self) -> VitalParams:
        return VitalParams(self.temp_mean, self.temp_std, self.hr_mean, self.hr_std)


def generate_dataset(farm: FarmConfig, seed: int, vital_params=None, capacity_j: float = 5000.0,
                     sleep_w: float = 1e-5, epoch_start: int = EPOCH_START) -> pd.DataFrame:
    """One row per animal per upload interval, drawn from the world model."""
    rng = np.random.default_rng(seed)
    world = init_world(farm, rng, vital_params)
    n = farm.num_animals
    slots = farm.duration_s // farm.upload_interval_s
    battery = rng.uniform(*farm.les_battery_range, size=n)
    battery[rng.choice(n, size=farm.num_hes, replace=False)] = 1.0
    cols = {c: np.empty((slots, n)) for c in EVD_COLUMNS if c not in ("serial", "timestamp")}
    stamps = np.empty(slots, dtype=np.int64)
    for k in range(slots):
        t = world.t
        cols["hr"][k] = world.vitals[:, 1]
        cols["avg_temp"][k] = world.vitals[:, 0]
        spread = np.abs(rng.normal(0.0, TEMP_SPREAD, size=(2, n)))
        cols["min_temp"][k] = world.vitals[:, 0] - spread[0]
        cols["max_temp"][k] = world.vitals[:, 0] + spread[1]
        cols["avg_activity"][k] = world.vitals[:, 2]
        cols["battery_level"][k] = battery
        stamps[k] = epoch_start + int(t)
        dt = farm.upload_interval_s
        gain = harvest_joules(farm.exposure_at(t), dt, farm.panel_area_cm2) - sleep_w * dt
        battery = np.clip(battery + gain / capacity_j, 0.0, 1.0)
        step_movement(world, dt, rng)
        sample_all_vitals(world, rng)
    frame = pd.DataFrame({
        "serial": np.tile(np.arange(n), slots),
        **{c: cols[c].reshape(-1) for c in cols},
        "timestamp": np.repeat(stamps, n),
    })
    return frame[list(EVD_COLUMNS)]


def validate_schema(table: pd.DataFrame) -> None:
    missing = [c for c in EVD_COLUMNS if c not in table.columns]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    for c in EVD_COLUMNS:
        if not pd.api.types.is_numeric_dtype(table[c]) or pd.api.types.is_bool_dtype(table[c]):
            raise SchemaError(f"column {c!r} must be numeric, found {table[c].dtype}")
    if table[list(EVD_COLUMNS)].isna().any().any():
        bad = [c for c in EVD_COLUMNS if table[c].isna().any()]
        raise SchemaError(f"missing values in column(s): {', '.join(bad)}")
    if ((table["min_temp"] > table["avg_temp"]) | (table["avg_temp"] > table["max_temp"])).any():
        raise SchemaError("rows violate min_temp <= avg_temp <= max_temp")


def ingest_dataset(table: pd.DataFrame) -> dict[int, AnimalDistribution]:
    """Per-animal empirical mean and std (population) of temperature, heart rate and activity."""
    validate_schema(table)
    out: dict[int, AnimalDistribution] = {}
    for serial, grp in table.groupby("serial", sort=True):
        if len(grp) == 1:
            warnings.warn(f"animal {serial} has a single row; its spread is taken as 0", stacklevel=2)
        out[int(serial)] = AnimalDistribution(
            int(serial), len(grp),
            float(grp["avg_temp"].mean()), float(grp["avg_temp"].std(ddof=0)),
            float(grp["hr"].mean()), float(grp["hr"].std(ddof=0)),
            float(grp["avg_activity"].mean()), float(grp["avg_activity"].std(ddof=0)),
        )
    return out


def pooled_std(dists: dict[int, AnimalDistribution], field_name: str) -> float:
    """Root of the count-weighted mean within-animal variance."""
    total = sum(d.n for d in dists.values())
    return float(np.sqrt(sum(d.n * getattr(d, field_name) ** 2 for d in dists.values()) / total))
