import numpy as np
import pytest

from src.core.optimizer import initial_simplex, minimize_batched


def rosenbrock(x):
    return 100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2


def minimize(func, x0, lower, upper, **settings):
    """One scalar objective through the batched search."""
    return minimize_batched(lambda points, owners: np.array([func(point) for point in points]), [x0], lower, upper,
                            **settings)


def test_initial_simplex_stays_in_box():
    x0 = np.array([[0.0, 1.0]])
    simplex = initial_simplex(x0, np.array([0.0, 0.0]), np.array([1.0, 1.0]), step=0.2)
    assert simplex.shape == (1, 3, 2)
    np.testing.assert_allclose(simplex[0], [[0.0, 1.0], [0.2, 1.0], [0.0, 0.8]])


def test_quadratic_bowl():
    result = minimize(lambda x: float(np.sum((x - [0.3, -1.2]) ** 2)), [2.0, 2.0], [-5.0, -5.0], [5.0, 5.0],
                      xatol=1e-8, fatol=1e-14, max_iter=1000)
    assert result.converged[0]
    np.testing.assert_allclose(result.x[0], [0.3, -1.2], atol=1e-5)
    assert result.fun[0] < result.initial_fun[0]


def test_rosenbrock_valley():
    result = minimize(rosenbrock, [-1.2, 1.0], [-2.0, -2.0], [2.0, 2.0], xatol=1e-8, fatol=1e-14, max_iter=2000)
    np.testing.assert_allclose(result.x[0], [1.0, 1.0], atol=1e-3)
    assert result.fun[0] < 1e-6


def test_optimum_on_the_boundary():
    result = minimize(lambda x: float((x[0] - 3.0) ** 2), [0.5], [0.0], [1.0], xatol=1e-9, fatol=1e-12)
    assert result.x[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert result.fun[0] == pytest.approx(4.0, abs=1e-5)


def test_rows_are_independent():
    targets = np.array([[0.1, 0.9], [0.5, 0.5], [0.8, 0.2]])
    calls = []

    def objective(points, owners):
        calls.append(len(owners))
        return np.sum((points - targets[owners]) ** 2, axis=1)

    x0 = np.full((3, 2), 0.4)
    result = minimize_batched(objective, x0, [0.0, 0.0], [1.0, 1.0], xatol=1e-7, fatol=1e-14, max_iter=500)
    assert result.converged.all()
    np.testing.assert_allclose(result.x, targets, atol=1e-5)
    assert calls[0] == 9
    assert result.evaluations.sum() == sum(calls)
    assert np.all(result.evaluations >= 3)


def test_nan_values_count_as_infinite():
    def objective(x):
        return np.nan if x[0] > 0.5 else (x[0] - 0.8) ** 2

    result = minimize(objective, [0.2], [0.0], [1.0], xatol=1e-6, fatol=1e-12)
    assert np.isfinite(result.fun[0])
    assert result.x[0, 0] <= 0.5


def test_iteration_limit_reports_no_convergence():
    result = minimize(rosenbrock, [-1.2, 1.0], [-2.0, -2.0], [2.0, 2.0], max_iter=3)
    assert not result.converged[0]
    assert result.iterations[0] == 3
