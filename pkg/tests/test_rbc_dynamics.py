import numpy as np
import pytest

from src.core.rbc_dynamics import equilibrium, simulate_urbc, urbc_derivatives


def test_equilibrium_matches_reference_densities(table_params):
    eq = equilibrium(table_params)
    assert eq.r_r_star == pytest.approx(62.50e6, rel=0.01)
    assert eq.r_m_star == pytest.approx(4853e6, rel=0.01)
    assert eq.r_s_star == pytest.approx(83.30e6, rel=0.01)
    assert eq.total == pytest.approx(4.99e9, rel=0.01)


def test_equilibrium_is_stationary(table_params):
    eq = equilibrium(table_params)
    derivative = urbc_derivatives(eq.as_array(), table_params)
    np.testing.assert_allclose(derivative, 0.0, atol=1e-6 * table_params.lambda0)


def test_no_production_means_pure_decay(table_params):
    params = table_params.with_overrides(lambda0=0.0)
    derivative = urbc_derivatives([36.0, 0.0, 0.0], params)
    np.testing.assert_allclose(derivative, [-1.0, 1.0, 0.0])


def test_perturbed_state_reconverges(table_params):
    eq = equilibrium(table_params).as_array()
    perturbed = eq * np.array([1.2, 0.8, 1.2])
    # the mature class relaxes on a 2796 h time scale
    final = simulate_urbc(perturbed, table_params, t_end=6.0e4, dt=4.0)
    np.testing.assert_allclose(final, eq, rtol=1e-6)


def test_simulate_urbc_rejects_bad_step(table_params):
    with pytest.raises(ValueError):
        simulate_urbc([1.0, 1.0, 1.0], table_params, t_end=10.0, dt=0.0)
