import numpy as np
import pytest

from src.core.units import HOURS_PER_DAY, convert_units, parse_duration, step_count
from src.utils.errors import ConfigError


def test_days_to_hours():
    assert convert_units(2.0, "day", "h") == 48.0
    assert convert_units(116.5, "days", "hours") == pytest.approx(2796.0)


def test_rate_per_day_to_per_hour():
    assert convert_units(0.00833, "day^-1", "h^-1") == pytest.approx(0.00833 / 24.0)
    assert convert_units(48.0, "1/day", "1/h") == pytest.approx(2.0)


def test_array_conversion():
    values = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(convert_units(values, "d", "h"), values * HOURS_PER_DAY)


def test_identity_conversion_returns_value():
    assert convert_units(5.0, "h", "hour") == 5.0


def test_dimension_mismatch_rejected():
    with pytest.raises(ConfigError):
        convert_units(1.0, "day", "h^-1")


def test_unknown_unit_rejected():
    with pytest.raises(ConfigError):
        convert_units(1.0, "week", "h")


@pytest.mark.parametrize("text,hours", [("40d", 960.0), ("960h", 960.0), ("0.05", 0.05), (12, 12.0), ("1.5d", 36.0)])
def test_parse_duration(text, hours):
    assert parse_duration(text) == pytest.approx(hours)


@pytest.mark.parametrize("text", ["", "forty days", "3w", "-2d"])
def test_parse_duration_rejects_garbage(text):
    with pytest.raises(ConfigError):
        parse_duration(text)


def test_step_count_on_grid():
    assert step_count(960.0, 0.05, "t_end") == 19200
    assert step_count(0.3, 0.1, "record_every") == 3
    assert step_count(0.0, 0.25, "sample time") == 0


def test_step_count_off_grid():
    with pytest.raises(ConfigError, match="record_every"):
        step_count(1.0, 0.3, "record_every")
