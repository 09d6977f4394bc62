"""
Unit conversion between hours and days.

Hours are the canonical time unit; day-based values are converted once at
load time.
"""

import re
from typing import Union

import numpy as np

from ..utils.errors import ConfigError

HOURS_PER_DAY = 24.0

Quantity = Union[float, np.ndarray]

# unit alias -> (dimension, hours exponent)
_UNITS = {
    "h": ("time", 1), "hour": ("time", 1), "hours": ("time", 1),
    "day": ("time", 1), "days": ("time", 1), "d": ("time", 1),
    "h^-1": ("rate", -1), "h-1": ("rate", -1), "1/h": ("rate", -1), "h⁻¹": ("rate", -1),
    "day^-1": ("rate", -1), "day-1": ("rate", -1), "1/day": ("rate", -1), "day⁻¹": ("rate", -1),
    "d^-1": ("rate", -1), "1/d": ("rate", -1), "d⁻¹": ("rate", -1),
}

_DAY_BASED = {"day", "days", "d", "day^-1", "day-1", "1/day", "day⁻¹", "d^-1", "1/d", "d⁻¹"}

_DURATION = re.compile(r'^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(h|d)?\s*$')


def _lookup(unit: str):
    key = unit.strip()
    if key not in _UNITS:
        raise ConfigError(f"Unsupported unit: {unit!r}")
    dimension, exponent = _UNITS[key]
    scale = HOURS_PER_DAY if key in _DAY_BASED else 1.0
    return dimension, exponent, scale


def convert_units(value: Quantity, from_unit: str, to_unit: str) -> Quantity:
    """
    Convert a time or rate quantity between hour and day units.

    Args:
        value: Scalar or array in from_unit
        from_unit: One of h, day, h^-1, day^-1 (common aliases accepted)
        to_unit: Target unit of the same dimension

    Returns:
        Value expressed in to_unit

    Raises:
        ConfigError: Unknown unit or mismatched dimensions
    """
    src_dim, exponent, src_scale = _lookup(from_unit)
    dst_dim, _, dst_scale = _lookup(to_unit)
    if src_dim != dst_dim:
        raise ConfigError(f"Cannot convert {from_unit} to {to_unit}")

    if src_scale == dst_scale:
        return value
    if exponent > 0:
        return value * src_scale / dst_scale
    return value * dst_scale / src_scale


def parse_duration(text: Union[str, float, int]) -> float:
    """Parse '40d', '960h' or a bare number of hours into hours."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    match = _DURATION.match(str(text))
    if not match:
        raise ConfigError(f"Invalid duration: {text!r} (expected e.g. 40d, 12h, 0.05)")
    number = float(match.group(1))
    return number * HOURS_PER_DAY if match.group(2) == "d" else number


def step_count(span: float, dt: float, what: str, tol: float = 1e-9) -> int:
    """Number of dt steps in span; span must be a whole multiple of dt."""
    ratio = span / dt
    n = int(round(ratio))
    if abs(ratio - n) > tol * max(1.0, ratio):
        raise ConfigError(f"{what} ({span} h) must be a multiple of dt ({dt} h)")
    return n
