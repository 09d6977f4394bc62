"""Shared fixtures for the Gametodyn test suite."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.models.data_models import default_params  # noqa: E402
from src.utils.metrics import reset_metrics  # noqa: E402

GROWTH_BETA = 1.2e-10


@pytest.fixture(autouse=True)
def fresh_metrics():
    """Every test starts with an empty metrics registry."""
    return reset_metrics()


@pytest.fixture
def table_params():
    return default_params()


@pytest.fixture
def growth_params():
    """Calibrated parameter set with a growing first wave."""
    return default_params(beta=GROWTH_BETA)


@pytest.fixture
def rising_parasitemia():
    """Smooth positive parasitemia curve on a daily grid, days 0..40."""
    days = np.arange(41, dtype=float)
    return days, 1e-4 * np.exp(0.25 * days) / (1.0 + 1e-2 * np.exp(0.25 * days))
