"""
Data models for Gametodyn.

Parameter sets, model states, trajectories and the records exchanged by the
fitting, regression and I/O layers. Densities are cells/ml, times hours.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..core.units import convert_units
from ..utils.errors import ConfigError

# Fixed parameters, converted to hours
LAMBDA0 = 1.73e6            # cells/ml/h
DUR_RETICULOCYTE = 36.0     # h
DUR_MATURE = convert_units(116.5, "day", "h")
DUR_SENESCENT = 48.0        # h
BETA_TABLE = convert_units(6.27e-10, "day^-1", "h^-1")  # ml/cell/h, table magnitude read per day
D0 = convert_units(0.00833, "day^-1", "h^-1")
MU_MERO = convert_units(48.0, "day^-1", "h^-1")
R_BURST = 16.0
SI_STAR = 2.755e6           # cells/ml (2755 cells/ul)
SA_STAR = 2.04e4            # cells/ml*h (20.4 cells/ul)
DELTA0 = convert_units(16.0, "day", "h")
DELTA1 = convert_units(8.0, "day", "h")
MU_BAR = 10.0               # 1/h
DEV_TIME = 48.0             # h

# Initial values and representative patient estimates
ALPHA_G = 0.05
MU_G = 1.0e-3               # 1/h
M0 = 2.5e7                  # cells/ml
K_STAGES = 50

FREE_PARAMETERS = ("alpha_g", "m0", "mu_g")


class ModelParams(BaseModel):
    """Fixed and fitted biological parameters in canonical hour units."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    lambda0: float = Field(LAMBDA0, ge=0, description="RBC production rate, cells/ml/h")
    dur_r: float = Field(DUR_RETICULOCYTE, gt=0, description="Reticulocyte stage duration, h")
    dur_m: float = Field(DUR_MATURE, gt=0, description="Mature RBC stage duration, h")
    dur_s: float = Field(DUR_SENESCENT, gt=0, description="Senescent RBC stage duration, h")
    beta: float = Field(BETA_TABLE, ge=0, description="Infection rate, ml/cell/h")
    d0: float = Field(D0, ge=0, description="Natural RBC death rate, 1/h")
    mu_mero: float = Field(MU_MERO, ge=0, description="Merozoite decay rate, 1/h")
    r_burst: float = Field(R_BURST, ge=0, description="Merozoites released per rupture")
    alpha_g: float = Field(ALPHA_G, ge=0, le=1, description="Gametocyte commitment fraction")
    mu_g: float = Field(MU_G, ge=0, description="Gametocyte clearance rate, 1/h")
    gamma_r: int = Field(1, description="Reticulocytes susceptible (0/1)")
    gamma_m: int = Field(1, description="Mature RBC susceptible (0/1)")
    gamma_s: int = Field(1, description="Senescent RBC susceptible (0/1)")
    si_star: float = Field(SI_STAR, gt=0, description="Innate response half-effect density, cells/ml")
    sa_star: float = Field(SA_STAR, gt=0, description="Adaptive response half-effect, cells/ml*h")
    delta0: float = Field(DELTA0, ge=0, description="Adaptive response delay, h")
    delta1: float = Field(DELTA1, ge=0, description="Adaptive response accumulation window, h")
    mu_bar: float = Field(MU_BAR, ge=0, description="Rupture intensity beyond dev_time, 1/h")
    dev_time: float = Field(DEV_TIME, gt=0, description="Intracellular development time, h")
    m0: float = Field(M0, ge=0, description="Initial merozoite density, cells/ml")
    k_stages: int = Field(K_STAGES, ge=1, description="Number of ODE compartments")
    mu_i: Tuple[float, ...] = Field(..., description="Per-stage exit rates, 1/h")
    d_i: Tuple[float, ...] = Field(..., description="Per-stage death rates, 1/h")
    innate_mode: Literal["verbatim", "proportional"] = Field(
        "verbatim", description="Innate response subtracted as printed, or as a per-capita rate")

    @model_validator(mode="before")
    @classmethod
    def fill_equal_stages(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        try:
            k = int(data.get("k_stages", K_STAGES))
            dev_time = float(data.get("dev_time", DEV_TIME))
            d0 = float(data.get("d0", D0))
        except (TypeError, ValueError):
            return data
        if k < 1 or dev_time <= 0:
            return data
        if data.get("mu_i") is None:
            data["mu_i"] = (k / dev_time,) * k
        if data.get("d_i") is None:
            data["d_i"] = (d0,) * k
        return data

    @field_validator("gamma_r", "gamma_m", "gamma_s")
    @classmethod
    def switch_is_binary(cls, v):
        if v not in (0, 1):
            raise ValueError(f"RBC-age preference switch must be 0 or 1, got {v}")
        return v

    @model_validator(mode="after")
    def stage_vectors_match_k(self):
        k = self.k_stages
        if len(self.mu_i) != k or len(self.d_i) != k:
            raise ValueError(
                f"Stage vectors must have length k_stages={k} "
                f"(mu_i: {len(self.mu_i)}, d_i: {len(self.d_i)})")
        if any(not (rate > 0) for rate in self.mu_i):
            raise ValueError("Stage exit rates mu_i must be strictly positive")
        if any(not (rate >= 0) for rate in self.d_i):
            raise ValueError("Stage death rates d_i must be nonnegative")
        return self

    @property
    def stage_rates(self) -> np.ndarray:
        return np.asarray(self.mu_i, dtype=float)

    @property
    def stage_deaths(self) -> np.ndarray:
        return np.asarray(self.d_i, dtype=float)

    @property
    def gammas(self) -> np.ndarray:
        return np.array([self.gamma_r, self.gamma_m, self.gamma_s], dtype=float)

    @property
    def durations(self) -> np.ndarray:
        return np.array([self.dur_r, self.dur_m, self.dur_s], dtype=float)

    def has_equal_stages(self) -> bool:
        """True if mu_i is the uniform K/dev_time vector."""
        return bool(np.allclose(self.stage_rates, self.k_stages / self.dev_time, rtol=1e-12, atol=0.0))

    def with_overrides(self, **changes) -> "ModelParams":
        """
        Return a validated copy with some fields replaced.

        Equal-stage vectors follow changes of k_stages, dev_time and d0;
        custom stage vectors must be replaced explicitly.

        Raises:
            ConfigError: Unknown field or invalid value
        """
        unknown = set(changes) - set(type(self).model_fields)
        if unknown:
            raise ConfigError(f"Unknown model parameter(s): {', '.join(sorted(unknown))}")

        data = self.model_dump()
        if changes.keys() & {"k_stages", "dev_time"} and "mu_i" not in changes:
            if not self.has_equal_stages():
                raise ConfigError("Custom mu_i must be overridden together with k_stages/dev_time")
            data.pop("mu_i")
        if changes.keys() & {"k_stages", "d0"} and "d_i" not in changes:
            if not all(d == self.d0 for d in self.d_i):
                raise ConfigError("Custom d_i must be overridden together with k_stages/d0")
            data.pop("d_i")
        data.update(changes)
        try:
            return ModelParams.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid model parameters: {e}") from e


def default_params(k_stages: int = K_STAGES, **overrides) -> ModelParams:
    """
    Fixed parameter set in hour units with the standard initial values.

    Equal stages are used: mu_i = K/dev_time and d_i = d0 for every stage.

    Args:
        k_stages: Number of ODE compartments
        **overrides: Field values replacing the defaults

    Returns:
        Validated ModelParams
    """
    try:
        return ModelParams(k_stages=k_stages, **overrides)
    except ValidationError as e:
        raise ConfigError(f"Invalid model parameters: {e}") from e


@dataclass(frozen=True)
class OdeState:
    """State of the K-compartment model."""

    r_r: float
    r_m: float
    r_s: float
    p: np.ndarray
    m: float
    g: float
    cum_m: float = 0.0

    @property
    def k_stages(self) -> int:
        return int(self.p.shape[0])

    def to_vector(self) -> np.ndarray:
        """Pack as [r_r, r_m, r_s, p_1..p_K, m, g]."""
        return np.concatenate(([self.r_r, self.r_m, self.r_s], self.p, [self.m, self.g]))

    @classmethod
    def from_vector(cls, y: np.ndarray, cum_m: float = 0.0) -> "OdeState":
        y = np.asarray(y, dtype=float)
        return cls(r_r=float(y[0]), r_m=float(y[1]), r_s=float(y[2]), p=y[3:-2].copy(),
                   m=float(y[-2]), g=float(y[-1]), cum_m=float(cum_m))


@dataclass(frozen=True)
class PdeState:
    """State of the age-structured model; p_grid holds cell-average densities per hour of age."""

    r_r: float
    r_m: float
    r_s: float
    p_grid: np.ndarray
    m: float
    g: float
    cum_m: float = 0.0

    def __post_init__(self):
        if np.any(self.p_grid < 0):
            raise ValueError("p_grid values must be nonnegative")


TRAJECTORY_COLUMNS = ("t_hours", "gametocytes", "merozoites", "parasitemia", "total_prbc", "total_urbc")


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed observables of one simulation."""

    times: np.ndarray
    gametocytes: np.ndarray
    merozoites: np.ndarray
    parasitemia: np.ndarray
    total_prbc: np.ndarray
    total_urbc: np.ndarray
    label: str = field(default="", compare=False)

    def __post_init__(self):
        n = len(self.times)
        for name in TRAJECTORY_COLUMNS[1:]:
            if len(getattr(self, name)) != n:
                raise ValueError(f"Trajectory column {name} has length {len(getattr(self, name))}, expected {n}")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("Trajectory times must be strictly increasing")
        if n and (np.any(self.parasitemia < 0) or np.any(self.parasitemia > 1)):
            raise ValueError("Parasitemia must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def days(self) -> np.ndarray:
        return self.times / 24.0

    @classmethod
    def empty(cls, label: str = "") -> "Trajectory":
        blank = np.empty(0)
        return cls(blank, blank, blank, blank, blank, blank, label=label)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t_hours": self.times,
            "gametocytes": self.gametocytes,
            "merozoites": self.merozoites,
            "parasitemia": self.parasitemia,
            "total_prbc": self.total_prbc,
            "total_urbc": self.total_urbc,
        }, columns=list(TRAJECTORY_COLUMNS))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, label: str = "") -> "Trajectory":
        missing = [c for c in TRAJECTORY_COLUMNS if c not in frame.columns]
        if missing:
            raise ValueError(f"Missing trajectory columns: {', '.join(missing)}")
        columns = {c: frame[c].to_numpy(dtype=float) for c in TRAJECTORY_COLUMNS}
        return cls(times=columns["t_hours"], gametocytes=columns["gametocytes"],
                   merozoites=columns["merozoites"], parasitemia=columns["parasitemia"],
                   total_prbc=columns["total_prbc"], total_urbc=columns["total_urbc"], label=label)

    def sample(self, times: np.ndarray, column: str = "gametocytes") -> np.ndarray:
        """Linearly interpolate a column at the given hours."""
        return np.interp(np.asarray(times, dtype=float), self.times, getattr(self, column))


class PatientSeries(BaseModel):
    """Daily gametocyte observations for one patient."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    patient_id: str = Field(..., min_length=1, description="Patient identifier")
    days: Tuple[int, ...] = Field(..., description="Observation day indices")
    gametocyte_density: Tuple[float, ...] = Field(..., description="Gametocytes, cells/ml")

    @model_validator(mode="after")
    def series_is_consistent(self):
        if len(self.days) != len(self.gametocyte_density):
            raise ValueError("days and gametocyte_density must have the same length")
        for previous, current in zip(self.days, self.days[1:]):
            if current <= previous:
                raise ValueError(f"Days must be strictly increasing (day {current} after {previous})")
        if self.days and self.days[0] < 0:
            raise ValueError("Days must be nonnegative")
        for day, value in zip(self.days, self.gametocyte_density):
            if value < 0:
                raise ValueError(f"Negative gametocyte density on day {day}")
        return self

    def __len__(self) -> int:
        return len(self.days)

    @property
    def hours(self) -> np.ndarray:
        return np.asarray(self.days, dtype=float) * 24.0

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.gametocyte_density, dtype=float)


class RegressionFit(BaseModel):
    """Two-regime log-log fit of gametocytes against parasitemia."""

    log10_k1: float
    theta1: float
    log10_k2: float
    theta2: float
    t0: float = Field(..., description="Change point, days")
    r2_first: float
    r2_second: float
    lag: float = Field(2.0, description="Lag of the first regime, days")
    se_log10_k1: float = Field(..., description="OLS standard error")
    se_theta1: float = Field(..., description="OLS standard error")
    se_log10_k2: float = Field(..., description="OLS standard error")
    se_theta2: float = Field(..., description="OLS standard error")
    n_first: int
    n_second: int
    sse: float = Field(..., ge=0)
    window: Tuple[float, float] = (2.0, 30.0)


DEFAULT_BOUNDS: Dict[str, Tuple[float, float]] = {
    "alpha_g": (1e-10, 1e-4),
    "m0": (1e5, 1e9),
    "mu_g": (1e-4, 1e-1),
}


class FitProblem(BaseModel):
    """Estimation of (alpha_g, m0, mu_g) and, for the ODE model, K from one series."""

    model_config = ConfigDict(frozen=True, protected_namespaces=())

    data: PatientSeries
    model_kind: Literal["ode", "pde"] = "ode"
    bounds: Dict[str, Tuple[float, float]] = Field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    k_range: Tuple[int, int] = (1, 100)
    k_step: int = Field(1, ge=1, description="Stride of the K grid")
    objective_scale: Literal["linear", "log10"] = "log10"
    epsilon: float = Field(1.0, ge=0, description="Offset inside log10(G + epsilon)")
    base_params: ModelParams = Field(default_factory=default_params)
    n_starts: int = Field(8, ge=1)
    max_iter: int = Field(400, ge=1)
    xatol: float = Field(1e-4, gt=0, description="Simplex size tolerance, log10 units")
    fatol: float = Field(1e-10, ge=0)
    dt: float = Field(0.25, gt=0, description="ODE step for objective evaluations, h")
    da: float = Field(0.25, gt=0, description="PDE age step for objective evaluations, h")
    workers: int = Field(1, ge=1)

    @field_validator("bounds")
    @classmethod
    def bounds_are_positive(cls, v):
        if set(v) != set(FREE_PARAMETERS):
            raise ValueError(f"bounds must name exactly {', '.join(FREE_PARAMETERS)}")
        for name, (lo, hi) in v.items():
            if not (0 < lo < hi and math.isfinite(hi)):
                raise ValueError(f"bounds for {name} must satisfy 0 < lo < hi < inf, got ({lo}, {hi})")
        if v["alpha_g"][1] > 1:
            raise ValueError("alpha_g upper bound must not exceed 1")
        return v

    @field_validator("k_range")
    @classmethod
    def k_range_in_limits(cls, v):
        lo, hi = v
        if not (1 <= lo <= hi <= 200):
            raise ValueError(f"k_range must satisfy 1 <= lo <= hi <= 200, got {v}")
        return v

    @property
    def k_grid(self) -> List[int]:
        lo, hi = self.k_range
        if self.model_kind == "pde":
            return [self.base_params.k_stages]
        return list(range(lo, hi + 1, self.k_step))


class FitResult(BaseModel):
    """Best parameters found for one patient."""

    model_config = ConfigDict(protected_namespaces=())

    patient_id: str
    model_kind: Literal["ode", "pde"]
    alpha_g: float
    m0: float
    mu_g: float
    k_opt: Optional[int] = None
    sse: float = Field(..., ge=0)
    converged: bool
    evaluations: int = Field(..., ge=0)
    k_profile: Dict[int, float] = Field(default_factory=dict, description="Best objective per K")


class DatasetManifest(BaseModel):
    """Patient files and the density unit they are recorded in."""

    patients: List[Tuple[str, str]] = Field(..., description="(patient_id, file path) pairs")
    units: Literal["cells/ml", "cells/ul"] = "cells/ml"
    source: str = ""

    @field_validator("units", mode="before")
    @classmethod
    def normalize_micro(cls, v):
        if isinstance(v, str):
            return v.strip().replace("μ", "u").replace("µ", "u")
        return v

    @field_validator("patients")
    @classmethod
    def ids_are_unique(cls, v):
        seen = set()
        for patient_id, _ in v:
            if patient_id in seen:
                raise ValueError(f"Duplicate patient id in manifest: {patient_id}")
            seen.add(patient_id)
        return v
