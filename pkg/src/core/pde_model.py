"""
Age-structured PDE model of blood-stage infection.

pRBC density p(t, a) is transported along infection age a and ruptures at
rate mu(a), zero before dev_time and mu_bar after. The age axis is split
into finite-volume cells of width da; at unit Courant number (dt = da) the
upwind transport is an exact shift.

Per step: transport, exponential per-cell sink split into rupture and
death, then exponential-Euler updates of merozoites, gametocytes and uRBC
driven by the merozoites released in the step. The step-averaged merozoite
density feeds the inflow flux and the adaptive immune integral.
"""

import logging
import time
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate

from ..models.data_models import ModelParams, PdeState, Trajectory
from ..utils.errors import ConfigError, NumericalError
from ..utils.metrics import get_metrics
from .immunity import merozoite_immune_terms, window_overlap
from .rbc_dynamics import equilibrium
from .units import step_count

logger = logging.getLogger(__name__)

_GRID_TOL = 1e-9
DEFAULT_A_MAX = 54.0


@dataclass(frozen=True)
class AgeMesh:
    """Uniform infection-age grid on [0, a_max]."""

    da: float = 0.05
    a_max: float = DEFAULT_A_MAX

    def __post_init__(self):
        if not self.da > 0:
            raise ConfigError(f"da must be positive, got {self.da}")
        ratio = self.a_max / self.da
        if abs(ratio - round(ratio)) > _GRID_TOL * ratio:
            raise ConfigError(f"da ({self.da}) must divide a_max ({self.a_max})")

    @property
    def n_cells(self) -> int:
        return int(round(self.a_max / self.da))

    @property
    def cell_starts(self) -> np.ndarray:
        return np.arange(self.n_cells) * self.da

    @property
    def cell_midpoints(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.da

    def validate_for(self, rf: "RuptureFunction"):
        """The development time must sit on a cell boundary with 6 h of headroom."""
        if self.a_max < rf.dev_time + 6.0 - _GRID_TOL:
            raise ConfigError(f"a_max ({self.a_max}) must be >= dev_time + 6 h ({rf.dev_time + 6.0})")
        ratio = rf.dev_time / self.da
        if abs(ratio - round(ratio)) > _GRID_TOL * max(ratio, 1.0):
            raise ConfigError(f"dev_time ({rf.dev_time}) must fall on a cell boundary of da={self.da}")

    def total(self, p_grid: np.ndarray) -> np.ndarray:
        """Cell-sum quadrature of a density over age."""
        return p_grid.sum(axis=-1) * self.da


@dataclass(frozen=True)
class RuptureFunction:
    """mu(a) = 0 for a < dev_time, mu_bar for a >= dev_time."""

    dev_time: float = 48.0
    mu_bar: float = 10.0

    @classmethod
    def from_params(cls, params: ModelParams) -> "RuptureFunction":
        return cls(dev_time=params.dev_time, mu_bar=params.mu_bar)


def rupture_rate(a, rf: RuptureFunction):
    """Rupture hazard at age a, 1/h."""
    a = np.asarray(a, dtype=float)
    result = np.where(a >= rf.dev_time, rf.mu_bar, 0.0)
    return float(result) if result.ndim == 0 else result


def pde_survival(a, rf: RuptureFunction):
    """D(a) = exp(-int_0^a mu): 1 up to dev_time, exp(-mu_bar (a - dev_time)) beyond."""
    a = np.asarray(a, dtype=float)
    result = np.exp(-rf.mu_bar * np.maximum(a - rf.dev_time, 0.0))
    return float(result) if result.ndim == 0 else result


def pde_mean_development(rf: RuptureFunction, numeric: bool = False) -> float:
    """
    Mean pRBC lifetime, int_0^inf D(a) da = dev_time + 1/mu_bar.

    With numeric=True the integral is evaluated by adaptive quadrature.
    """
    if not numeric:
        return rf.dev_time + (1.0 / rf.mu_bar if rf.mu_bar > 0 else np.inf)
    head, _ = integrate.quad(lambda a: pde_survival(a, rf), 0.0, rf.dev_time)
    tail, _ = integrate.quad(lambda a: pde_survival(a, rf), rf.dev_time, np.inf)
    return head + tail


class PdeSimConfig(BaseModel):
    """Time stepping for the PDE model; dt defaults to the cell width."""

    model_config = ConfigDict(frozen=True)

    dt: Optional[float] = Field(None, gt=0, description="Step, hours (None: unit Courant number)")
    t_end: float = Field(960.0, ge=0, description="Horizon, hours")
    record_every: float = Field(1.0, gt=0, description="Sampling interval, hours")
    clamp_negative: bool = True

    def step_for(self, mesh: AgeMesh) -> float:
        return mesh.da if self.dt is None else self.dt


@dataclass(frozen=True)
class StepBalance:
    """pRBC mass flows over one step, cells/ml."""

    mass_before: float
    mass_after: float
    inflow: float
    ruptured: float
    died: float
    outflow: float

    @property
    def residual(self) -> float:
        return self.mass_after - (self.mass_before + self.inflow - self.ruptured - self.died - self.outflow)


def _exp_update(x0: np.ndarray, source: np.ndarray, rate: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact step of dx/dt = source - rate*x with frozen coefficients.

    Returns:
        (x at t + dt, mean of x over the step)
    """
    rdt = rate * dt
    small = rdt <= 1e-12
    safe_rate = np.where(small, 1.0, rate)
    phi = np.where(small, dt, -np.expm1(-rdt) / safe_rate)
    x_new = x0 * np.exp(-rdt) + source * phi
    steady = source / safe_rate
    mean = np.where(small, x0 + 0.5 * source * dt, steady + (x0 - steady) * phi / dt)
    return x_new, mean


class PdeBatch:
    """Finite-volume stepper for several parameter sets on one mesh."""

    def __init__(self, param_sets: Sequence[ModelParams], mesh: AgeMesh,
                 rupture_functions: Optional[Sequence[RuptureFunction]] = None):
        if not param_sets:
            raise ValueError("At least one parameter set is required")
        self.param_sets = list(param_sets)
        self.mesh = mesh
        if rupture_functions is None:
            rupture_functions = [RuptureFunction.from_params(p) for p in self.param_sets]
        self.rupture_functions = list(rupture_functions)
        for rf in self.rupture_functions:
            mesh.validate_for(rf)
        self.n_rows = len(self.param_sets)

        def column(name):
            return np.array([getattr(p, name) for p in self.param_sets], dtype=float)

        self.lambda0 = column("lambda0")
        self.inv_dur = 1.0 / np.array([p.durations for p in self.param_sets])
        self.beta = column("beta")
        self.gammas = np.array([p.gammas for p in self.param_sets])
        self.mu_mero = column("mu_mero")
        self.r_burst = column("r_burst")
        self.alpha_g = column("alpha_g")
        self.mu_g = column("mu_g")
        self.d0 = column("d0")
        self.si_star = column("si_star")
        self.sa_star = column("sa_star")
        self.delta0 = column("delta0")
        self.delta1 = column("delta1")
        self.proportional = np.array([p.innate_mode == "proportional" for p in self.param_sets])

        starts = mesh.cell_starts
        self.rupture = np.array([rupture_rate(starts, rf) for rf in self.rupture_functions])
        self._sink_cache = {}

    def _sink(self, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        """Per-cell removed fraction over dt and the share of it that ruptures."""
        if dt not in self._sink_cache:
            total = self.rupture + self.d0[:, None]
            removed = -np.expm1(-dt * total)
            share = np.divide(self.rupture, total, out=np.zeros_like(total), where=total > 0)
            self._sink_cache[dt] = (removed, share)
        return self._sink_cache[dt]

    def initial_state(self):
        r = np.array([equilibrium(p).as_array() for p in self.param_sets])
        p_grid = np.zeros((self.n_rows, self.mesh.n_cells))
        m = np.array([p.m0 for p in self.param_sets], dtype=float)
        return r, p_grid, m, np.zeros(self.n_rows), np.zeros(self.n_rows)

    def step(self, t, r, p_grid, m, g, cum_m, dt, clamp=True):
        """
        Advance every row by dt.

        Returns:
            (r, p_grid, m, g, cum_m, balance dict of per-row arrays, clamped count)
        """
        da = self.mesh.da
        if dt > da * (1 + 1e-12):
            raise NumericalError(f"CFL violation: dt={dt} exceeds da={da}")
        courant = dt / da
        removed, share = self._sink(dt)

        # transport; cell 0 receives the inflow once m is known
        shifted = np.empty_like(p_grid)
        if abs(courant - 1.0) <= 1e-12:
            shifted[:, 1:] = p_grid[:, :-1]
            outflow = p_grid[:, -1] * da
        else:
            shifted[:, 1:] = p_grid[:, 1:] - courant * (p_grid[:, 1:] - p_grid[:, :-1])
            outflow = courant * p_grid[:, -1] * da

        leaving = shifted[:, 1:] * removed[:, 1:]
        ruptured = (leaving * share[:, 1:]).sum(axis=1) * da
        production = self.r_burst * ruptured / dt

        susceptible = self.gammas * r
        absolute, rate = merozoite_immune_terms(m, t, cum_m, self.si_star, self.sa_star,
                                                self.delta0, self.proportional)
        m_rate = self.mu_mero + self.beta * susceptible.sum(axis=1) + rate
        m_new, m_mean = _exp_update(m, (1.0 - self.alpha_g) * production - absolute, m_rate, dt)
        m_mean = np.maximum(m_mean, 0.0)

        boundary = self.beta * m_mean * susceptible.sum(axis=1)
        if abs(courant - 1.0) <= 1e-12:
            shifted[:, 0] = boundary
        else:
            shifted[:, 0] = p_grid[:, 0] - courant * (p_grid[:, 0] - boundary)
        died = (shifted * removed * (1.0 - share)).sum(axis=1) * da
        p_new = shifted * (1.0 - removed)

        g_new, _ = _exp_update(g, self.alpha_g * production, self.mu_g, dt)

        drain = self.beta[:, None] * m_mean[:, None] * self.gammas
        feed = np.column_stack((self.lambda0, r[:, 0] * self.inv_dur[:, 0], r[:, 1] * self.inv_dur[:, 1]))
        r_new, _ = _exp_update(r, feed, self.inv_dur + drain, dt)

        cum_new = cum_m + m_mean * window_overlap(t, dt, self.delta0, self.delta1)

        clamped = 0
        if clamp:
            negative = m_new < 0
            clamped = int(negative.sum())
            m_new = np.where(negative, 0.0, m_new)

        balance = {
            "mass_before": self.mesh.total(p_grid),
            "mass_after": self.mesh.total(p_new),
            "inflow": boundary * dt,
            "ruptured": ruptured,
            "died": died,
            "outflow": outflow,
        }
        return r_new, p_new, m_new, g_new, cum_new, balance, clamped

    def observables(self, r, p_grid, m, g) -> dict:
        prbc = self.mesh.total(p_grid)
        urbc = r.sum(axis=1)
        total = prbc + urbc
        with np.errstate(invalid="ignore", divide="ignore"):
            fraction = np.where(total > 0, prbc / total, 0.0)
        return {"gametocytes": g.copy(), "merozoites": m.copy(), "parasitemia": np.clip(fraction, 0.0, 1.0),
                "total_prbc": prbc, "total_urbc": urbc}


def initial_pde_state(params: ModelParams, mesh: AgeMesh) -> PdeState:
    """Standard initial condition: uRBC at equilibrium, free of pRBC, m = m0, G = 0."""
    eq = equilibrium(params)
    return PdeState(r_r=eq.r_r_star, r_m=eq.r_m_star, r_s=eq.r_s_star,
                    p_grid=np.zeros(mesh.n_cells), m=params.m0, g=0.0, cum_m=0.0)


def _unpack(state: PdeState, mesh: AgeMesh):
    if state.p_grid.shape != (mesh.n_cells,):
        raise ConfigError(f"p_grid has shape {state.p_grid.shape}, mesh needs ({mesh.n_cells},)")
    r = np.array([[state.r_r, state.r_m, state.r_s]], dtype=float)
    return (r, state.p_grid[None, :].astype(float), np.array([state.m], dtype=float),
            np.array([state.g], dtype=float), np.array([state.cum_m], dtype=float))


def pde_step_balance(state: PdeState, t: float, dt: float, params: ModelParams, mesh: AgeMesh,
                     rf: RuptureFunction) -> Tuple[PdeState, StepBalance]:
    """One step plus its pRBC mass bookkeeping."""
    engine = PdeBatch([params], mesh, [rf])
    r, p_grid, m, g, cum = _unpack(state, mesh)
    r, p_grid, m, g, cum, balance, _ = engine.step(t, r, p_grid, m, g, cum, dt)
    if not (np.all(np.isfinite(p_grid)) and np.all(np.isfinite(r)) and np.isfinite(m[0]) and np.isfinite(g[0])):
        raise NumericalError(f"PDE state became non-finite at t={t + dt:.4g} h")
    new_state = PdeState(r_r=float(r[0, 0]), r_m=float(r[0, 1]), r_s=float(r[0, 2]), p_grid=p_grid[0],
                         m=float(m[0]), g=float(g[0]), cum_m=float(cum[0]))
    return new_state, StepBalance(**{name: float(values[0]) for name, values in balance.items()})


def pde_step(state: PdeState, t: float, dt: float, params: ModelParams, mesh: AgeMesh,
             rf: RuptureFunction) -> PdeState:
    """
    Advance the PDE state by one step.

    Raises:
        NumericalError: dt > da or a non-finite result
    """
    new_state, _ = pde_step_balance(state, t, dt, params, mesh, rf)
    return new_state


def simulate_pde(init: PdeState, config: PdeSimConfig, params: ModelParams, mesh: AgeMesh,
                 rf: Optional[RuptureFunction] = None) -> Trajectory:
    """
    Integrate the PDE model and sample observables.

    Args:
        init: Initial state (see initial_pde_state)
        config: Step (default da), horizon and sampling interval
        params: Model parameters
        mesh: Age grid
        rf: Rupture function (default from params)

    Returns:
        Trajectory sampled every config.record_every hours
    """
    rf = rf or RuptureFunction.from_params(params)
    dt = config.step_for(mesh)
    n_steps = step_count(config.t_end, dt, "t_end")
    per_record = step_count(config.record_every, dt, "record_every")
    if per_record < 1:
        raise ConfigError(f"record_every ({config.record_every}) must be >= dt ({dt})")

    engine = PdeBatch([params], mesh, [rf])
    r, p_grid, m, g, cum = _unpack(init, mesh)

    n_records = n_steps // per_record + 1
    records = {name: np.empty(n_records) for name in
               ("gametocytes", "merozoites", "parasitemia", "total_prbc", "total_urbc")}

    start = time.perf_counter()
    clamp_events = 0
    with get_metrics().timer("simulation", {"model": "pde"}):
        for step in range(n_steps + 1):
            if step % per_record == 0:
                for name, values in engine.observables(r, p_grid, m, g).items():
                    records[name][step // per_record] = values[0]
            if step == n_steps:
                break
            t = step * dt
            r, p_grid, m, g, cum, _, clamped = engine.step(t, r, p_grid, m, g, cum, dt, config.clamp_negative)
            clamp_events += clamped
            if not (np.isfinite(m[0]) and np.isfinite(g[0]) and np.all(np.isfinite(r))):
                raise NumericalError(f"PDE state became non-finite at t={t + dt:.4g} h (da={mesh.da})")

    get_metrics().record_simulation("pde", rows=1, steps=n_steps, clamp_events=clamp_events)
    logger.debug(f"PDE run: {n_steps} steps on {mesh.n_cells} cells in {time.perf_counter() - start:.3f}s")
    times = np.arange(n_records) * config.record_every
    return Trajectory(times=times, label=f"pde_da{mesh.da:g}", **records)


def simulate_pde_batch(param_sets: Sequence[ModelParams], mesh: AgeMesh,
                       sample_times: Sequence[float], dt: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gametocyte density of several parameter sets at common sample times.

    Returns:
        (G with shape (rows, samples), finite flag per row)
    """
    dt = mesh.da if dt is None else dt
    sample_steps = np.array([step_count(t, dt, "sample time") for t in sample_times], dtype=int)
    engine = PdeBatch(param_sets, mesh)
    r, p_grid, m, g, cum = engine.initial_state()
    values = np.zeros((engine.n_rows, len(sample_steps)))
    finite = np.ones(engine.n_rows, dtype=bool)
    last_step = int(sample_steps.max()) if len(sample_steps) else 0

    with get_metrics().timer("simulation", {"model": "pde"}):
        for step in range(last_step + 1):
            for column in np.nonzero(sample_steps == step)[0]:
                values[:, column] = g
            if step == last_step:
                break
            r, p_grid, m, g, cum, _, _ = engine.step(step * dt, r, p_grid, m, g, cum, dt)
            bad = ~(np.isfinite(m) & np.isfinite(g) & np.all(np.isfinite(r), axis=1))
            if bad.any():
                finite &= ~bad
                r[bad], p_grid[bad], m[bad], g[bad], cum[bad] = 0.0, 0.0, 0.0, 0.0, 0.0

    values[~finite] = np.nan
    get_metrics().record_simulation("pde", rows=engine.n_rows, steps=last_step)
    return values, finite
