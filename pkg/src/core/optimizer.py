"""
Bounded Nelder-Mead simplex search over many independent problems at once.

Every row owns one simplex. Rows advance in lockstep so each phase of an
iteration (reflection, expansion or contraction, shrink) is a single call
of the vectorised objective. Points are projected onto the box by clipping.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

# objective(points (m, n), owners (m,)) -> values (m,)
BatchObjective = Callable[[np.ndarray, np.ndarray], np.ndarray]

REFLECT = 1.0
EXPAND = 2.0
CONTRACT = 0.5
SHRINK = 0.5


@dataclass
class SimplexResult:
    """Best vertex of every row."""

    x: np.ndarray
    fun: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    evaluations: np.ndarray
    initial_fun: np.ndarray


def initial_simplex(x0: np.ndarray, lower: np.ndarray, upper: np.ndarray, step: float = 0.1) -> np.ndarray:
    """
    Simplex of shape (rows, n + 1, n) around x0.

    Vertex i moves coordinate i by step * (upper - lower); the move is
    flipped when it would leave the box.
    """
    rows, n = x0.shape
    delta = step * (upper - lower)
    simplex = np.repeat(x0[:, None, :], n + 1, axis=1)
    for i in range(n):
        forward = x0[:, i] + delta[i]
        simplex[:, i + 1, i] = np.where(forward <= upper[i], forward, x0[:, i] - delta[i])
    return simplex


def minimize_batched(func: BatchObjective, x0: np.ndarray, lower, upper, step: float = 0.1,
                     xatol: float = 1e-4, fatol: float = 1e-10, max_iter: int = 400) -> SimplexResult:
    """
    Minimise one objective per row of x0 inside a common box.

    Args:
        func: Vectorised objective; owners tells which row each point belongs to
        x0: Starting points, shape (rows, n)
        lower, upper: Box bounds, shape (n,)
        step: Initial simplex size as a fraction of the box width
        xatol: Convergence threshold on the largest vertex distance to the best vertex
        fatol: Convergence threshold on the spread of objective values
        max_iter: Iteration limit per row

    Returns:
        SimplexResult; rows that hit max_iter have converged = False
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x0 = np.clip(np.atleast_2d(np.asarray(x0, dtype=float)), lower, upper)
    rows, n = x0.shape
    row_ids = np.arange(rows)

    simplex = initial_simplex(x0, lower, upper, step)
    values = np.asarray(func(simplex.reshape(-1, n), np.repeat(row_ids, n + 1)), dtype=float).reshape(rows, n + 1)
    values = np.where(np.isnan(values), np.inf, values)
    initial_fun = values[:, 0].copy()
    evaluations = np.full(rows, n + 1)
    iterations = np.zeros(rows, dtype=int)
    converged = np.zeros(rows, dtype=bool)
    active = np.ones(rows, dtype=bool)

    def evaluate(points: np.ndarray, owners: np.ndarray) -> np.ndarray:
        if len(owners) == 0:
            return np.empty(0)
        result = np.asarray(func(points, owners), dtype=float)
        np.add.at(evaluations, owners, 1)
        return np.where(np.isnan(result), np.inf, result)

    for _ in range(max_iter):
        order = np.argsort(values, axis=1, kind="stable")
        simplex = np.take_along_axis(simplex, order[:, :, None], axis=1)
        values = np.take_along_axis(values, order, axis=1)

        size = np.max(np.abs(simplex[:, 1:] - simplex[:, :1]), axis=(1, 2))
        with np.errstate(invalid="ignore"):
            spread = np.max(np.abs(values[:, 1:] - values[:, :1]), axis=1)
        done = active & (size <= xatol) & (spread <= fatol)
        converged |= done
        active &= ~done
        if not active.any():
            break

        idx = np.nonzero(active)[0]
        iterations[idx] += 1
        worst = simplex[idx, -1]
        f_best = values[idx, 0]
        f_second = values[idx, -2]
        f_worst = values[idx, -1]
        centroid = simplex[idx, :-1].mean(axis=1)

        x_reflect = np.clip(centroid + REFLECT * (centroid - worst), lower, upper)
        f_reflect = evaluate(x_reflect, idx)

        expand = f_reflect < f_best
        accept_reflect = (f_reflect >= f_best) & (f_reflect < f_second)
        outside = (f_reflect >= f_second) & (f_reflect < f_worst)
        inside = f_reflect >= f_worst

        trial = np.empty_like(x_reflect)
        trial[expand] = centroid[expand] + REFLECT * EXPAND * (centroid[expand] - worst[expand])
        trial[outside] = centroid[outside] + CONTRACT * (x_reflect[outside] - centroid[outside])
        trial[inside] = centroid[inside] - CONTRACT * (centroid[inside] - worst[inside])
        trial = np.clip(trial, lower, upper)
        second = ~accept_reflect
        f_trial = np.full(len(idx), np.inf)
        f_trial[second] = evaluate(trial[second], idx[second])

        new_vertex = worst.copy()
        new_value = f_worst.copy()
        shrink = np.zeros(len(idx), dtype=bool)

        take = accept_reflect | (expand & (f_trial >= f_reflect))
        new_vertex[take], new_value[take] = x_reflect[take], f_reflect[take]
        take = expand & (f_trial < f_reflect)
        new_vertex[take], new_value[take] = trial[take], f_trial[take]
        take = outside & (f_trial <= f_reflect)
        new_vertex[take], new_value[take] = trial[take], f_trial[take]
        take = inside & (f_trial < f_worst)
        new_vertex[take], new_value[take] = trial[take], f_trial[take]
        shrink |= outside & (f_trial > f_reflect)
        shrink |= inside & (f_trial >= f_worst)

        keep = idx[~shrink]
        simplex[keep, -1] = new_vertex[~shrink]
        values[keep, -1] = new_value[~shrink]

        if shrink.any():
            rows_shrunk = idx[shrink]
            anchor = simplex[rows_shrunk, :1]
            shrunk = anchor + SHRINK * (simplex[rows_shrunk, 1:] - anchor)
            points = shrunk.reshape(-1, n)
            owners = np.repeat(rows_shrunk, n)
            simplex[rows_shrunk, 1:] = shrunk
            values[rows_shrunk, 1:] = evaluate(points, owners).reshape(len(rows_shrunk), n)

    order = np.argmin(values, axis=1)
    x_best = simplex[row_ids, order]
    f_best = values[row_ids, order]
    if active.any():
        logger.debug(f"Simplex search: {int(active.sum())} of {rows} rows reached max_iter={max_iter}")
    return SimplexResult(x=x_best, fun=f_best, converged=converged, iterations=iterations,
                         evaluations=evaluations, initial_fun=initial_fun)
