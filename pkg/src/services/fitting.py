"""
Patient-specific parameter estimation.

The continuous parameters (alpha_g, m0, mu_g) are searched in log10 space
by a bounded Nelder-Mead simplex from a deterministic lattice of starts;
for the ODE model the compartment count K is scanned exhaustively. All
(K, start) simplices advance together, so each optimiser phase costs one
batched simulation.
"""

import itertools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np

from ..core.ode_model import OdeSimConfig, simulate_ode_batch
from ..core.optimizer import minimize_batched
from ..core.pde_model import AgeMesh, simulate_pde_batch
from ..models.data_models import FREE_PARAMETERS, DatasetManifest, FitProblem, FitResult, ModelParams, PatientSeries
from ..utils.errors import ConfigError
from ..utils.logging import LogContext, PerformanceLogger, get_logger
from ..utils.metrics import get_metrics
from .data_io import load_patient_csv

logger = get_logger(__name__)

MIN_OBSERVATIONS = 5


def log_bounds(problem: FitProblem) -> Tuple[np.ndarray, np.ndarray]:
    """Lower and upper bounds of the free parameters in log10 units."""
    lower = np.array([math.log10(problem.bounds[name][0]) for name in FREE_PARAMETERS])
    upper = np.array([math.log10(problem.bounds[name][1]) for name in FREE_PARAMETERS])
    return lower, upper


def multistart_points(problem: FitProblem) -> np.ndarray:
    """
    Deterministic starting points on a regular lattice in log10 space.

    With L = ceil(n_starts ** (1/3)) levels per axis at fractions
    (i + 0.5)/L of each range, the first n_starts lattice points are used;
    8 starts give the 2x2x2 lattice at 1/4 and 3/4 of every range.
    """
    lower, upper = log_bounds(problem)
    levels = math.ceil(round(problem.n_starts ** (1.0 / len(FREE_PARAMETERS)), 9))
    fractions = (np.arange(levels) + 0.5) / levels
    lattice = list(itertools.product(fractions, repeat=len(FREE_PARAMETERS)))[:problem.n_starts]
    return lower + np.array(lattice) * (upper - lower)


class ObjectiveEvaluator:
    """Vectorised least-squares objective for one FitProblem."""

    def __init__(self, problem: FitProblem, row_k: Sequence[int] = ()):
        self.problem = problem
        self.row_k = np.asarray(row_k, dtype=int)
        self.hours = problem.data.hours
        self.target = self._transform(problem.data.values)
        self.evaluations = 0
        self._bases: Dict[int, ModelParams] = {}
        if problem.model_kind == "pde":
            self.mesh = AgeMesh(da=problem.da)

    def _transform(self, values: np.ndarray) -> np.ndarray:
        if self.problem.objective_scale == "log10":
            return np.log10(np.maximum(values, 0.0) + self.problem.epsilon)
        return values

    def _base_for(self, k: int) -> ModelParams:
        if k not in self._bases:
            base = self.problem.base_params
            self._bases[k] = base if k == base.k_stages else base.with_overrides(k_stages=k)
        return self._bases[k]

    def params_for(self, log_values: np.ndarray, k: int) -> ModelParams:
        """Parameter set for one point; the point is assumed inside the bounds."""
        alpha_g, m0, mu_g = (10.0 ** np.asarray(log_values, dtype=float)).tolist()
        return self._base_for(k).model_copy(update={"alpha_g": alpha_g, "m0": m0, "mu_g": mu_g})

    def model_values(self, param_sets: List[ModelParams]) -> Tuple[np.ndarray, np.ndarray]:
        """Gametocyte density at the observation times, one row per parameter set."""
        if self.problem.model_kind == "ode":
            config = OdeSimConfig(dt=self.problem.dt, record_every=max(self.problem.dt, 1.0))
            return simulate_ode_batch(param_sets, config, self.hours)
        return simulate_pde_batch(param_sets, self.mesh, self.hours)

    def sse(self, values: np.ndarray, finite: np.ndarray) -> np.ndarray:
        residual = self._transform(values) - self.target[None, :]
        result = np.where(finite, np.sum(residual ** 2, axis=1), np.inf)
        if not finite.all():
            logger.warning("Simulation blow-up; objective set to infinity", rows=int((~finite).sum()),
                           model=self.problem.model_kind)
        return result

    def evaluate(self, points: np.ndarray, ks: Sequence[int]) -> np.ndarray:
        param_sets = [self.params_for(point, k) for point, k in zip(points, ks)]
        values, finite = self.model_values(param_sets)
        self.evaluations += len(param_sets)
        return self.sse(values, finite)

    def __call__(self, points: np.ndarray, owners: np.ndarray) -> np.ndarray:
        return self.evaluate(points, self.row_k[owners])


def objective(params_free: Sequence[float], k: int, problem: FitProblem) -> float:
    """
    Sum of squared residuals between model G and the data.

    Args:
        params_free: (alpha_g, m0, mu_g) in natural units
        k: Compartment count (ignored by the PDE model)
        problem: Data, model kind and objective scale

    Returns:
        SSE on the configured scale; infinity if the simulation blows up
    """
    evaluator = ObjectiveEvaluator(problem)
    point = np.log10(np.asarray(params_free, dtype=float))
    k = k if problem.model_kind == "ode" else problem.base_params.k_stages
    return float(evaluator.evaluate(point[None, :], [k])[0])


@dataclass
class _SearchOutcome:
    ks: np.ndarray
    x: np.ndarray
    fun: np.ndarray
    converged: np.ndarray
    initial_fun: np.ndarray
    evaluations: int


def _search(problem: FitProblem, ks: Sequence[int]) -> _SearchOutcome:
    """Run every (K, start) simplex of a K chunk in lockstep."""
    starts = multistart_points(problem)
    row_k = np.repeat(np.asarray(ks, dtype=int), len(starts))
    x0 = np.tile(starts, (len(ks), 1))
    lower, upper = log_bounds(problem)
    evaluator = ObjectiveEvaluator(problem, row_k)
    result = minimize_batched(evaluator, x0, lower, upper, xatol=problem.xatol, fatol=problem.fatol,
                              max_iter=problem.max_iter)
    return _SearchOutcome(ks=row_k, x=result.x, fun=result.fun, converged=result.converged,
                          initial_fun=result.initial_fun, evaluations=evaluator.evaluations)


def _chunks(ks: List[int], n: int) -> List[List[int]]:
    size = math.ceil(len(ks) / n)
    return [ks[i:i + size] for i in range(0, len(ks), size)]


def _run_searches(problem: FitProblem) -> _SearchOutcome:
    ks = problem.k_grid
    if problem.workers == 1 or len(ks) == 1:
        return _search(problem, ks)

    chunks = _chunks(ks, problem.workers)
    with ProcessPoolExecutor(max_workers=min(problem.workers, len(chunks))) as pool:
        outcomes = list(pool.map(_search, [problem] * len(chunks), chunks))
    return _SearchOutcome(
        ks=np.concatenate([o.ks for o in outcomes]),
        x=np.concatenate([o.x for o in outcomes]),
        fun=np.concatenate([o.fun for o in outcomes]),
        converged=np.concatenate([o.converged for o in outcomes]),
        initial_fun=np.concatenate([o.initial_fun for o in outcomes]),
        evaluations=sum(o.evaluations for o in outcomes),
    )


def fit(problem: FitProblem) -> FitResult:
    """
    Least-squares estimate of (alpha_g, m0, mu_g) and, for the ODE model, K.

    The selected row has the lowest objective; ties go to the lowest K and
    then to the lexicographically smallest parameters. converged is False
    when no start of the selected K met the tolerances.

    Raises:
        ConfigError: Fewer than 5 observations
    """
    if len(problem.data) < MIN_OBSERVATIONS:
        raise ConfigError(f"Need at least {MIN_OBSERVATIONS} observations, got {len(problem.data)}")

    patient_id = problem.data.patient_id
    perf = PerformanceLogger(logger)
    start = time.perf_counter()
    with LogContext(logger, patient_id=patient_id, model=problem.model_kind) as log:
        log.info("Fit started", k_grid=len(problem.k_grid), starts=problem.n_starts)
        with get_metrics().timer("fit", {"model": problem.model_kind}):
            outcome = _run_searches(problem)

        order = sorted(range(len(outcome.fun)),
                       key=lambda i: (outcome.fun[i], outcome.ks[i], tuple(outcome.x[i])))
        best = order[0]
        k_best = int(outcome.ks[best])
        profile = {}
        for k, value in zip(outcome.ks, outcome.fun):
            profile[int(k)] = min(profile.get(int(k), math.inf), float(value))
        converged = bool(outcome.converged[outcome.ks == k_best].any()) and math.isfinite(outcome.fun[best])
        alpha_g, m0, mu_g = (10.0 ** outcome.x[best]).tolist()

        result = FitResult(
            patient_id=patient_id,
            model_kind=problem.model_kind,
            alpha_g=alpha_g,
            m0=m0,
            mu_g=mu_g,
            k_opt=k_best if problem.model_kind == "ode" else None,
            sse=float(outcome.fun[best]),
            converged=converged,
            evaluations=outcome.evaluations,
            k_profile=profile,
        )
        if not converged:
            log.warning("No start met the convergence tolerances", sse=result.sse, k_opt=result.k_opt)

    get_metrics().increment_objective_evaluations(problem.model_kind, outcome.evaluations)
    get_metrics().record_fit(patient_id, problem.model_kind, converged, result.sse)
    perf.log_fit(patient_id, problem.model_kind, outcome.evaluations, time.perf_counter() - start)
    return result


@dataclass(frozen=True)
class TransferResult:
    """ODE fit and the PDE run at the transferred parameters."""

    ode: FitResult
    pde_params: ModelParams
    pde_sse: float


def fit_with_transfer(problem: FitProblem) -> TransferResult:
    """Fit the ODE model, then evaluate the PDE model at the fitted (alpha_g, m0, mu_g)."""
    ode_problem = problem.model_copy(update={"model_kind": "ode"})
    ode_result = fit(ode_problem)
    pde_problem = problem.model_copy(update={"model_kind": "pde"})
    pde_sse = objective((ode_result.alpha_g, ode_result.m0, ode_result.mu_g), 0, pde_problem)
    pde_params = problem.base_params.with_overrides(alpha_g=ode_result.alpha_g, m0=ode_result.m0,
                                                    mu_g=ode_result.mu_g)
    logger.info("Transferred ODE estimates to the PDE model", patient_id=problem.data.patient_id,
                ode_sse=ode_result.sse, pde_sse=pde_sse)
    return TransferResult(ode=ode_result, pde_params=pde_params, pde_sse=pde_sse)


def fit_dataset(manifest: DatasetManifest, problem_for: Callable[[PatientSeries], FitProblem],
                transfer: bool = False) -> List[Union[FitResult, TransferResult]]:
    """
    Fit every patient listed in a manifest.

    Args:
        manifest: Patient files (absolute or relative to the working directory)
        problem_for: Builds the FitProblem for one loaded series
        transfer: Run fit_with_transfer instead of fit

    Returns:
        One FitResult (TransferResult with transfer) per patient, in manifest order
    """
    results = []
    for patient_id, path in manifest.patients:
        try:
            series = load_patient_csv(path, units=manifest.units, patient_id=patient_id)
            problem = problem_for(series)
            results.append(fit_with_transfer(problem) if transfer else fit(problem))
        except Exception as e:
            logger.error("Fit failed", patient_id=patient_id, path=str(path), error=str(e))
            raise
    return results
