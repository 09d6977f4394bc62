"""
K-compartment ODE model of blood-stage infection.

Parasitized cells pass through K sequential compartments before rupture,
so the development time is Gamma(K, dev_time/K) distributed (linear chain
trick). Integration is fixed-step RK4; a batch of parameter sets, possibly
with different K, advances together so the fitting layer can evaluate many
candidates per step.
"""

import logging
import math
import time
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import special, stats

from ..models.data_models import ModelParams, OdeState, Trajectory
from ..utils.errors import ConfigError, NumericalError
from ..utils.metrics import get_metrics
from .immunity import merozoite_immune_terms, window_overlap
from .rbc_dynamics import equilibrium
from .units import step_count

logger = logging.getLogger(__name__)

_STEP_TOL = 1e-9


class OdeSimConfig(BaseModel):
    """Fixed-step integration settings."""

    model_config = ConfigDict(frozen=True)

    dt: float = Field(0.05, gt=0, description="Step, hours")
    t_end: float = Field(960.0, ge=0, description="Horizon, hours")
    record_every: float = Field(1.0, gt=0, description="Sampling interval, hours")
    clamp_negative: bool = True

    @model_validator(mode="after")
    def record_on_step_grid(self):
        if self.record_every < self.dt * (1 - _STEP_TOL):
            raise ValueError(f"record_every ({self.record_every}) must be >= dt ({self.dt})")
        return self

    @property
    def steps_per_record(self) -> int:
        return step_count(self.record_every, self.dt, "record_every")

    @property
    def n_steps(self) -> int:
        return step_count(self.t_end, self.dt, "t_end")


class OdeBatch:
    """
    Vectorised right-hand side and RK4 stepper for several parameter sets.

    State rows are [R_r, R_m, R_s, p_1..p_Kmax, m, G]; rows with K < Kmax
    keep their padding compartments at zero.
    """

    def __init__(self, param_sets: Sequence[ModelParams]):
        if not param_sets:
            raise ValueError("At least one parameter set is required")
        self.param_sets = list(param_sets)
        rows = len(self.param_sets)
        self.k = np.array([p.k_stages for p in self.param_sets])
        self.k_max = int(self.k.max())
        self.n_rows = rows
        self.n_cols = self.k_max + 5
        self._rows = np.arange(rows)
        self._last = self.k - 1

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
        self.si_star = column("si_star")
        self.sa_star = column("sa_star")
        self.delta0 = column("delta0")
        self.delta1 = column("delta1")
        self.proportional = np.array([p.innate_mode == "proportional" for p in self.param_sets])

        self.exit_rate = np.zeros((rows, self.k_max))
        self.transfer = np.zeros((rows, self.k_max))
        self.rupture_rate = np.empty(rows)
        for i, p in enumerate(self.param_sets):
            mu = p.stage_rates
            k = p.k_stages
            self.exit_rate[i, :k] = mu + p.stage_deaths
            self.transfer[i, :k - 1] = mu[:-1]
            self.rupture_rate[i] = mu[-1]

    def initial_state(self) -> Tuple[np.ndarray, np.ndarray]:
        """Uninfected equilibrium, no pRBC, m = m0, G = 0."""
        y = np.zeros((self.n_rows, self.n_cols))
        for i, p in enumerate(self.param_sets):
            y[i, :3] = equilibrium(p).as_array()
            y[i, -2] = p.m0
        return y, np.zeros(self.n_rows)

    def rhs(self, t: float, y: np.ndarray, cum_m: np.ndarray) -> np.ndarray:
        r = y[:, :3]
        p = y[:, 3:3 + self.k_max]
        m = y[:, -2]
        g = y[:, -1]

        susceptible = self.gammas * r
        infection = (self.beta * m)[:, None] * susceptible
        outflow = r * self.inv_dur

        dy = np.empty_like(y)
        dy[:, 0] = self.lambda0 - outflow[:, 0] - infection[:, 0]
        dy[:, 1] = outflow[:, 0] - outflow[:, 1] - infection[:, 1]
        dy[:, 2] = outflow[:, 1] - outflow[:, 2] - infection[:, 2]

        dp = dy[:, 3:3 + self.k_max]
        np.multiply(-self.exit_rate, p, out=dp)
        dp[:, 0] += infection.sum(axis=1)
        dp[:, 1:] += self.transfer[:, :-1] * p[:, :-1]

        rupture = self.r_burst * self.rupture_rate * p[self._rows, self._last]
        absolute, rate = merozoite_immune_terms(m, t, cum_m, self.si_star, self.sa_star,
                                                self.delta0, self.proportional)
        loss_rate = self.mu_mero + self.beta * susceptible.sum(axis=1) + rate
        dy[:, -2] = (1.0 - self.alpha_g) * rupture - loss_rate * m - absolute
        dy[:, -1] = self.alpha_g * rupture - self.mu_g * g
        return dy

    def step(self, t: float, y: np.ndarray, cum_m: np.ndarray, dt: float,
             clamp: bool = True) -> Tuple[np.ndarray, np.ndarray, int]:
        """
        One RK4 step; S_A uses the cumulative density at the step start.

        Returns:
            (new state, new cumulative density, number of clamped components)
        """
        half = 0.5 * dt
        k1 = self.rhs(t, y, cum_m)
        k2 = self.rhs(t + half, y + half * k1, cum_m)
        k3 = self.rhs(t + half, y + half * k2, cum_m)
        k4 = self.rhs(t + dt, y + dt * k3, cum_m)
        y_new = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        clamped = 0
        if clamp:
            negative = y_new < 0
            clamped = int(negative.sum())
            if clamped:
                y_new[negative] = 0.0

        overlap = window_overlap(t, dt, self.delta0, self.delta1)
        cum_new = cum_m + np.maximum(y[:, -2], 0.0) * overlap
        return y_new, cum_new, clamped

    def observables(self, y: np.ndarray) -> dict:
        prbc = y[:, 3:3 + self.k_max].sum(axis=1)
        urbc = y[:, :3].sum(axis=1)
        total = prbc + urbc
        with np.errstate(invalid="ignore", divide="ignore"):
            fraction = np.where(total > 0, prbc / total, 0.0)
        return {"gametocytes": y[:, -1].copy(), "merozoites": y[:, -2].copy(),
                "parasitemia": np.clip(fraction, 0.0, 1.0), "total_prbc": prbc, "total_urbc": urbc}


def initial_ode_state(params: ModelParams) -> OdeState:
    """Standard initial condition: uRBC at equilibrium, no pRBC, m = m0, G = 0."""
    eq = equilibrium(params)
    return OdeState(r_r=eq.r_r_star, r_m=eq.r_m_star, r_s=eq.r_s_star,
                    p=np.zeros(params.k_stages), m=params.m0, g=0.0, cum_m=0.0)


def _check_dimensions(state: OdeState, params: ModelParams):
    if state.k_stages != params.k_stages:
        raise ConfigError(f"State has {state.k_stages} compartments but k_stages={params.k_stages}")


def ode_rhs(state: OdeState, t: float, params: ModelParams) -> OdeState:
    """
    Time derivative of every state component.

    The cum_m field of the result is the accumulation rate of the adaptive
    integral (m inside the window, zero outside).

    Raises:
        ConfigError: len(state.p) differs from params.k_stages
    """
    _check_dimensions(state, params)
    engine = OdeBatch([params])
    dy = engine.rhs(t, state.to_vector()[None, :], np.array([state.cum_m]))[0]
    in_window = params.delta0 <= t < params.delta0 + params.delta1
    return OdeState.from_vector(dy, cum_m=state.m if in_window else 0.0)


def simulate_ode(init: OdeState, config: OdeSimConfig, params: ModelParams) -> Trajectory:
    """
    Integrate the K-compartment model and sample observables.

    Args:
        init: Initial state (see initial_ode_state)
        config: Step, horizon, sampling interval and clamping
        params: Model parameters

    Returns:
        Trajectory sampled every config.record_every hours

    Raises:
        ConfigError: Inconsistent dimensions or step grid
        NumericalError: Non-finite state
    """
    _check_dimensions(init, params)
    n_steps = config.n_steps
    per_record = config.steps_per_record
    engine = OdeBatch([params])
    y = init.to_vector()[None, :].astype(float)
    cum = np.array([init.cum_m], dtype=float)

    n_records = n_steps // per_record + 1
    records = {name: np.empty(n_records) for name in
               ("gametocytes", "merozoites", "parasitemia", "total_prbc", "total_urbc")}
    times = np.arange(n_records) * config.record_every

    start = time.perf_counter()
    clamp_events = 0
    with get_metrics().timer("simulation", {"model": "ode"}):
        for step in range(n_steps + 1):
            if step % per_record == 0:
                obs = engine.observables(y)
                for name, values in obs.items():
                    records[name][step // per_record] = values[0]
            if step == n_steps:
                break
            t = step * config.dt
            y, cum, clamped = engine.step(t, y, cum, config.dt, config.clamp_negative)
            clamp_events += clamped
            if not np.all(np.isfinite(y)):
                raise NumericalError(f"ODE state became non-finite at t={t + config.dt:.4g} h "
                                     f"(K={params.k_stages}, dt={config.dt})")

    get_metrics().record_simulation("ode", rows=1, steps=n_steps, clamp_events=clamp_events)
    if clamp_events:
        logger.info(f"ODE run clamped {clamp_events} negative components (K={params.k_stages})")
    logger.debug(f"ODE run: {n_steps} steps in {time.perf_counter() - start:.3f}s")

    return Trajectory(times=times, label=f"ode_k{params.k_stages}", **records)


def simulate_ode_batch(param_sets: Sequence[ModelParams], config: OdeSimConfig,
                       sample_times: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gametocyte density of several parameter sets at common sample times.

    Every row starts from the standard initial condition. A row whose state
    turns non-finite is frozen and flagged instead of aborting the batch.

    Args:
        param_sets: Parameter sets (K may differ)
        config: Step and clamping; t_end and record_every are ignored
        sample_times: Hours, each a multiple of config.dt

    Returns:
        (G with shape (rows, samples), finite flag per row)
    """
    sample_steps = np.array([step_count(t, config.dt, "sample time") for t in sample_times], dtype=int)
    engine = OdeBatch(param_sets)
    y, cum = engine.initial_state()
    values = np.zeros((engine.n_rows, len(sample_steps)))
    finite = np.ones(engine.n_rows, dtype=bool)
    last_step = int(sample_steps.max()) if len(sample_steps) else 0

    clamp_events = 0
    with get_metrics().timer("simulation", {"model": "ode"}):
        for step in range(last_step + 1):
            hits = np.nonzero(sample_steps == step)[0]
            for column in hits:
                values[:, column] = y[:, -1]
            if step == last_step:
                break
            y, cum, clamped = engine.step(step * config.dt, y, cum, config.dt, config.clamp_negative)
            clamp_events += clamped
            bad = ~np.all(np.isfinite(y), axis=1)
            if bad.any():
                finite &= ~bad
                y[bad] = 0.0
                cum[bad] = 0.0

    values[~finite] = np.nan
    get_metrics().record_simulation("ode", rows=engine.n_rows, steps=last_step, clamp_events=clamp_events)
    return values, finite


def chain_survival(k: int, a, dev_time: float = 48.0):
    """
    Probability that a Gamma(k, dev_time/k) transit time exceeds age a.

    Equal to the regularized upper incomplete gamma Q(k, a*k/dev_time),
    i.e. P(Poisson(a*k/dev_time) <= k - 1).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError("Age must be nonnegative")
    result = special.gammaincc(k, a * k / dev_time)
    return float(result) if result.ndim == 0 else result


def chain_moments(k: int, dev_time: float = 48.0) -> Tuple[float, float]:
    """Mean and variance of the chain transit time: (dev_time, dev_time**2 / k)."""
    mean, var = stats.gamma(a=k, scale=dev_time / k).stats(moments="mv")
    return float(mean), float(var)


def sample_chain_transit(k: int, n: int, seed: int, dev_time: float = 48.0) -> np.ndarray:
    """Monte Carlo transit times through k exponential stages of mean dev_time/k."""
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.gamma(shape=k, scale=dev_time / k, size=n)


def stage_grid(k_values: Sequence[int]) -> List[int]:
    """Sorted unique compartment counts."""
    grid = sorted({int(k) for k in k_values})
    if not grid or grid[0] < 1:
        raise ConfigError("Compartment counts must be positive integers")
    return grid


def mean_development_time(params: ModelParams) -> float:
    """Sum of mean stage durations; equals dev_time for equal stages."""
    return float(math.fsum(1.0 / rate for rate in params.mu_i))
