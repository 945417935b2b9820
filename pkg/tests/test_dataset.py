import warnings

import numpy as np
import pandas as pd
import pytest

from smartfarm.dataset import (
    EVD_COLUMNS,
    SchemaError,
    generate_dataset,
    ingest_dataset,
    pooled_std,
    validate_schema,
)
from smartfarm.world import FarmConfig, VitalParams


@pytest.fixture(scope="module")
def full_day():
    return generate_dataset(FarmConfig(), 0)


def test_row_count_and_schema(full_day):
    assert len(full_day) == 20 * 2880
    assert tuple(full_day.columns) == EVD_COLUMNS
    assert full_day["timestamp"].dtype.kind == "i"


def test_temperature_ordering(full_day):
    assert (full_day["min_temp"] <= full_day["avg_temp"]).all()
    assert (full_day["avg_temp"] <= full_day["max_temp"]).all()


def test_same_seed_identical():
    farm = FarmConfig(duration_s=3600)
    pd.testing.assert_frame_equal(generate_dataset(farm, 3), generate_dataset(farm, 3))
    assert not generate_dataset(farm, 3).equals(generate_dataset(farm, 4))


def test_round_trip_within_two_percent(full_day):
    dists = ingest_dataset(full_day)
    params = VitalParams()
    for d in dists.values():
        assert d.temp_mean == pytest.approx(params.temp_mean, rel=0.02)
        assert d.hr_mean == pytest.approx(params.hb_mean, rel=0.02)
    assert pooled_std(dists, "temp_std") == pytest.approx(params.temp_std, rel=0.02)
    assert pooled_std(dists, "hr_std") == pytest.approx(params.hb_std, rel=0.02)


def test_per_animal_parameters_round_trip():
    farm = FarmConfig(num_animals=3, num_hes=1)
    params = [VitalParams(38.0, 0.2, 60.0, 3.0), VitalParams(38.5, 0.3, 66.0, 4.0), VitalParams(39.0, 0.4, 72.0, 5.0)]
    dists = ingest_dataset(generate_dataset(farm, 1, params))
    for p, d in zip(params, dists.values()):
        assert d.temp_mean == pytest.approx(p.temp_mean, rel=0.02)
        assert d.temp_std == pytest.approx(p.temp_std, rel=0.05)
        assert d.vital_params().hb_mean == pytest.approx(p.hb_mean, rel=0.02)


def test_single_row_warns():
    table = generate_dataset(FarmConfig(duration_s=60, num_animals=2, num_hes=1), 0).iloc[:1]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        dists = ingest_dataset(table)
    assert caught and dists[0].temp_std == 0.0


def test_missing_column_named():
    table = generate_dataset(FarmConfig(duration_s=60), 0).drop(columns=["hr"])
    with pytest.raises(SchemaError, match="hr"):
        ingest_dataset(table)


def test_non_numeric_rejected():
    table = generate_dataset(FarmConfig(duration_s=60), 0)
    table["avg_activity"] = "high"
    with pytest.raises(SchemaError, match="avg_activity"):
        validate_schema(table)


def test_temperature_order_violation_rejected():
    table = generate_dataset(FarmConfig(duration_s=60), 0)
    table.loc[0, "min_temp"] = 50.0
    with pytest.raises(SchemaError):
        validate_schema(table)


def test_battery_level_in_unit_interval(full_day):
    assert full_day["battery_level"].between(0, 1).all()
    assert np.isclose(full_day["battery_level"], 1.0).sum() > 0
