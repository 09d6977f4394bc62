"""
Uninfected red blood cell maturation.

Three age classes (reticulocyte, mature, senescent) fed by a constant
marrow source. Infection losses are added by the coupled models.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..models.data_models import ModelParams


@dataclass(frozen=True)
class RbcEquilibrium:
    """Homeostatic uRBC densities, cells/ml."""

    r_r_star: float
    r_m_star: float
    r_s_star: float

    @property
    def total(self) -> float:
        return self.r_r_star + self.r_m_star + self.r_s_star

    def as_array(self) -> np.ndarray:
        return np.array([self.r_r_star, self.r_m_star, self.r_s_star])


def urbc_derivatives(state: Sequence[float], params: ModelParams) -> np.ndarray:
    """
    Right-hand side of the parasite-free maturation system.

    dR_r = L0 - R_r/dur_r
    dR_m = R_r/dur_r - R_m/dur_m
    dR_s = R_m/dur_m - R_s/dur_s

    Args:
        state: (R_r, R_m, R_s) in cells/ml
        params: Model parameters

    Returns:
        Derivatives in cells/ml/h
    """
    r_r, r_m, r_s = (float(x) for x in state)
    out_r = r_r / params.dur_r
    out_m = r_m / params.dur_m
    out_s = r_s / params.dur_s
    return np.array([params.lambda0 - out_r, out_r - out_m, out_m - out_s])


def equilibrium(params: ModelParams) -> RbcEquilibrium:
    """Equilibrium densities: the source rate times each mean stage duration."""
    return RbcEquilibrium(
        r_r_star=params.lambda0 * params.dur_r,
        r_m_star=params.lambda0 * params.dur_m,
        r_s_star=params.lambda0 * params.dur_s,
    )


def simulate_urbc(state: Sequence[float], params: ModelParams, t_end: float, dt: float = 1.0) -> np.ndarray:
    """
    Integrate the maturation system with fixed-step RK4.

    Args:
        state: Initial (R_r, R_m, R_s)
        params: Model parameters
        t_end: Horizon, hours
        dt: Step, hours

    Returns:
        State at t_end
    """
    if dt <= 0 or t_end < 0:
        raise ValueError(f"Need dt > 0 and t_end >= 0, got dt={dt}, t_end={t_end}")
    y = np.asarray(state, dtype=float).copy()
    n_steps = int(round(t_end / dt))
    for _ in range(n_steps):
        k1 = urbc_derivatives(y, params)
        k2 = urbc_derivatives(y + 0.5 * dt * k1, params)
        k3 = urbc_derivatives(y + 0.5 * dt * k2, params)
        k4 = urbc_derivatives(y + dt * k3, params)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y
