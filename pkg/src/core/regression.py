"""
Two-regime log-log regression of gametocyte density on parasitemia.

Before the change point T0, log10 G(t) is regressed on log10 P(t - lag);
after it, on log10 P(t). T0 is chosen by exhaustive search over the sample
times, minimising the total squared residual.
"""

import logging
import math
from typing import Tuple

import numpy as np
from scipy import stats

from ..models.data_models import RegressionFit, Trajectory
from ..utils.errors import NumericalError

logger = logging.getLogger(__name__)

# Clinical formula fitted on malariatherapy records
CLINICAL_K1 = 3.843e7
CLINICAL_THETA1 = 1.0304
CLINICAL_K2 = 2.981e9
CLINICAL_THETA2 = -0.0470
CLINICAL_T0 = 14.5636       # days
CLINICAL_LAG = 2.0          # days
CLINICAL_WINDOW = (2.0, 30.0)

# Relative error propagation constants of the clinical formula
ERROR_FLOOR = 2.3884e-4
ERROR_GAIN = 1.0617

_MIN_POINTS = 3


def _ols(x: np.ndarray, y: np.ndarray) -> Tuple[float, float, float, float, float, float]:
    """Intercept, slope, their standard errors, SSE and R^2."""
    fit = stats.linregress(x, y)
    residual = y - (fit.intercept + fit.slope * x)
    sse = float(np.dot(residual, residual))
    total = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - sse / total if total > 0 else 1.0
    return (float(fit.intercept), float(fit.slope), float(fit.intercept_stderr), float(fit.stderr), sse, r2)


def fit_two_regime(traj: Trajectory, lag: float = 2.0, window: Tuple[float, float] = (2.0, 30.0),
                   search: Tuple[float, float] = (4.0, 28.0)) -> RegressionFit:
    """
    Fit G = k1 P(t - lag)^theta1 on (lo, T0] and G = k2 P(t)^theta2 on (T0, hi].

    Args:
        traj: Trajectory sampled at least daily over the window
        lag: Shift of the first regime, days
        window: (lo, hi) in days; lo is exclusive
        search: Range of candidate change points, days

    Returns:
        RegressionFit with OLS standard errors

    Raises:
        NumericalError: Nonpositive densities or too few points per regime
    """
    lo, hi = window
    days = traj.days
    inside = (days > lo + 1e-9) & (days <= hi + 1e-9)
    t = days[inside]
    if len(t) < 2 * _MIN_POINTS:
        raise NumericalError(f"Need at least {2 * _MIN_POINTS} samples in ({lo}, {hi}] days, got {len(t)}")

    g = traj.gametocytes[inside]
    p_now = traj.parasitemia[inside]
    p_lagged = np.interp(t - lag, days, traj.parasitemia)
    for name, values in (("gametocyte density", g), ("parasitemia", p_now), ("lagged parasitemia", p_lagged)):
        bad = np.nonzero(values <= 0)[0]
        if len(bad):
            raise NumericalError(f"Nonpositive {name} at day {t[bad[0]]:.4g}; log-log regression undefined")

    y = np.log10(g)
    x_lagged = np.log10(p_lagged)
    x_now = np.log10(p_now)

    best = None
    candidates = t[(t >= search[0] - 1e-9) & (t <= search[1] + 1e-9)]
    for t0 in candidates:
        first = t <= t0 + 1e-9
        n_first, n_second = int(first.sum()), int((~first).sum())
        if n_first < _MIN_POINTS or n_second < _MIN_POINTS:
            continue
        try:
            one = _ols(x_lagged[first], y[first])
            two = _ols(x_now[~first], y[~first])
        except ValueError:
            # constant regressor in one regime
            continue
        sse = one[4] + two[4]
        # strict comparison keeps the earliest change point on ties
        if best is None or sse < best[0] - 1e-12 * max(1.0, best[0]):
            best = (sse, float(t0), one, two, n_first, n_second)

    if best is None:
        raise NumericalError(f"No change point in [{search[0]}, {search[1]}] days leaves "
                             f"{_MIN_POINTS} points in both regimes")

    sse, t0, one, two, n_first, n_second = best
    logger.debug(f"Two-regime fit: T0={t0:.4g} d, theta1={one[1]:.5f}, theta2={two[1]:.5f}, sse={sse:.3g}")
    return RegressionFit(
        log10_k1=one[0], theta1=one[1], log10_k2=two[0], theta2=two[1], t0=t0,
        r2_first=one[5], r2_second=two[5], lag=lag,
        se_log10_k1=one[2], se_theta1=one[3], se_log10_k2=two[2], se_theta2=two[3],
        n_first=n_first, n_second=n_second, sse=max(sse, 0.0), window=(lo, hi),
    )


def clinical_gametocytes(p, t):
    """
    Gametocyte density predicted by the clinical formula, cells/ml.

    p is the parasitemia that drives the active regime: P(t - 2) up to
    T0 = 14.5636 d, P(t) afterwards.

    Raises:
        ValueError: t outside (2, 30] days or p outside (0, 1]
    """
    p = np.asarray(p, dtype=float)
    t = np.asarray(t, dtype=float)
    lo, hi = CLINICAL_WINDOW
    if np.any(t <= lo) or np.any(t > hi):
        raise ValueError(f"Clinical formula is valid for t in ({lo}, {hi}] days")
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("Parasitemia must lie in (0, 1]")
    result = np.where(t <= CLINICAL_T0, CLINICAL_K1 * p ** CLINICAL_THETA1, CLINICAL_K2 * p ** CLINICAL_THETA2)
    return float(result) if result.ndim == 0 else result


def clinical_error_bound(rel_dp: float) -> float:
    """Bound on |dG/G| of the clinical formula for a relative parasitemia error rel_dp."""
    return math.sqrt(ERROR_FLOOR + ERROR_GAIN * rel_dp ** 2)
