"""
Innate and adaptive immune responses acting on free merozoites.

The innate factor saturates with the current merozoite density; the
adaptive factor switches on after a delay and saturates with the merozoite
density accumulated over a fixed window. Functions accept scalars or
per-row arrays so batched simulations share them.
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from ..models.data_models import ModelParams

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class ImmuneState:
    """Running integral of merozoite density over the adaptive window, cells/ml*h."""

    cum_m: float = 0.0

    def __post_init__(self):
        if self.cum_m < 0:
            raise ValueError(f"cum_m must be nonnegative, got {self.cum_m}")


def innate_response(m: ArrayLike, si_star: ArrayLike) -> ArrayLike:
    """S_I = m / (m + S_I*), in [0, 1)."""
    return m / (m + si_star)


def adaptive_response(t: float, cum_m: ArrayLike, sa_star: ArrayLike, delta0: ArrayLike,
                      delta1: ArrayLike = None) -> ArrayLike:
    """
    S_A = cum/(cum + S_A*) from t = delta0 on, zero before.

    cum_m is the integral over [delta0, min(t, delta0 + delta1)]; it stops
    growing at the end of the window, which keeps S_A constant afterwards.
    """
    value = cum_m / (cum_m + sa_star)
    if np.ndim(value) == 0 and np.ndim(delta0) == 0:
        return float(value) if t >= delta0 else 0.0
    return np.where(t >= delta0, value, 0.0)


def window_overlap(t: float, dt: float, delta0: ArrayLike, delta1: ArrayLike) -> ArrayLike:
    """Length of [t, t+dt] inside [delta0, delta0 + delta1]."""
    lo = np.maximum(t, delta0)
    hi = np.minimum(t + dt, np.add(delta0, delta1))
    overlap = np.maximum(hi - lo, 0.0)
    return float(overlap) if np.ndim(overlap) == 0 else overlap


def accumulate(prev: ImmuneState, t: float, dt: float, m: float, params: ModelParams) -> ImmuneState:
    """
    Advance the cumulative density over one step with the rectangle rule.

    Args:
        prev: State at time t
        t: Step start, hours
        dt: Step length, hours
        m: Merozoite density representative of the step
        params: Supplies delta0 and delta1

    Returns:
        State at t + dt
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    overlap = window_overlap(t, dt, params.delta0, params.delta1)
    if overlap == 0.0:
        return prev
    return ImmuneState(cum_m=prev.cum_m + max(m, 0.0) * overlap)


def merozoite_immune_terms(m: ArrayLike, t: float, cum_m: ArrayLike, si_star: ArrayLike,
                           sa_star: ArrayLike, delta0: ArrayLike,
                           proportional: ArrayLike = False) -> Tuple[ArrayLike, ArrayLike]:
    """
    Immune terms of the merozoite equation: dm/dt gets -absolute - rate*m.

    Verbatim mode subtracts S_I itself; proportional mode treats it as a
    per-capita rate. S_A is always a rate.

    Returns:
        (absolute, rate)
    """
    innate = innate_response(m, si_star)
    adaptive = adaptive_response(t, cum_m, sa_star, delta0)
    absolute = np.where(proportional, 0.0, innate)
    rate = adaptive + np.where(proportional, innate, 0.0)
    return absolute, rate
