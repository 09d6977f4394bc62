import math

import numpy as np
import pytest

from src.core.analysis import (R0Breakdown, parasitemia, r0_breakdown, r0_ode, r0_pde, stage_composition,
                               trajectory_distance)
from src.core.ode_model import OdeSimConfig, initial_ode_state, simulate_ode
from src.core.pde_model import AgeMesh, PdeSimConfig, initial_pde_state, simulate_pde
from src.core.rbc_dynamics import equilibrium
from src.models.data_models import OdeState, PdeState, Trajectory


def _trajectory(times, gametocytes):
    times = np.asarray(times, dtype=float)
    zeros = np.zeros_like(times)
    return Trajectory(times=times, gametocytes=np.asarray(gametocytes, dtype=float), merozoites=zeros,
                      parasitemia=zeros, total_prbc=zeros, total_urbc=zeros)


def test_parasitemia_of_ode_state():
    state = OdeState(r_r=1e6, r_m=7e6, r_s=1e6, p=np.array([4e5, 6e5]), m=0.0, g=0.0)
    assert parasitemia(state) == pytest.approx(0.1)


def test_parasitemia_of_pde_state():
    mesh = AgeMesh(da=0.5, a_max=54.0)
    p_grid = np.zeros(mesh.n_cells)
    p_grid[3] = 2.0
    state = PdeState(r_r=1.0, r_m=1.0, r_s=1.0, p_grid=p_grid, m=0.0, g=0.0)
    assert parasitemia(state, mesh) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        parasitemia(state)


def test_parasitemia_without_cells_is_undefined():
    with pytest.raises(ValueError):
        parasitemia(OdeState(r_r=0.0, r_m=0.0, r_s=0.0, p=np.zeros(3), m=1.0, g=0.0))


def test_parasitemia_is_zero_at_start(table_params):
    assert parasitemia(initial_ode_state(table_params)) == 0.0


def test_r0_vanishes_without_infection_or_asexual_offspring(table_params):
    assert r0_ode(table_params.with_overrides(beta=0.0)) == 0.0
    assert r0_pde(table_params.with_overrides(alpha_g=1.0)) == 0.0


def test_r0_ode_closed_form(table_params):
    params = table_params.with_overrides(k_stages=100)
    s = equilibrium(params).total
    mu = 100 / 48.0
    expected = (params.beta / (params.mu_mero + params.beta * s) * (1 - params.alpha_g) * params.r_burst
                * (mu / (mu + params.d0)) ** 100 * s)
    assert r0_ode(params) == pytest.approx(expected, rel=1e-12)


def test_chain_survival_factor_approaches_exponential(table_params):
    d0 = table_params.d0
    limit = math.exp(-48.0 * d0)
    assert abs((1 + 48.0 * d0 / 100) ** -100 - limit) / limit < 1e-3


def test_large_k_ode_r0_matches_pde_without_production_factor(table_params):
    ode = r0_ode(table_params.with_overrides(k_stages=10_000))
    pde = r0_pde(table_params, include_production_factor=False)
    assert abs(ode - pde) / pde < 1e-3


def test_pde_production_factor(table_params):
    breakdown = r0_breakdown(table_params, "pde")
    assert breakdown.production_factor >= 0.99
    assert breakdown.r0 == pytest.approx(r0_pde(table_params))


def test_growth_preset_is_supercritical(table_params, growth_params):
    assert r0_ode(table_params) < 1.0
    assert 3.0 < r0_ode(growth_params) < 4.0
    assert r0_pde(growth_params) > 1.0


def test_breakdown_dict_and_unknown_model(table_params):
    breakdown = r0_breakdown(table_params)
    assert isinstance(breakdown, R0Breakdown)
    values = breakdown.as_dict()
    assert values["burst_size"] == 16.0
    assert values["r0"] == pytest.approx(breakdown.r0)
    with pytest.raises(ValueError):
        r0_breakdown(table_params, "sde")


def test_stage_composition_of_ode_compartments():
    state = OdeState(r_r=0.0, r_m=1.0, r_s=0.0, p=np.ones(4), m=0.0, g=0.0)
    composition = stage_composition(state)
    assert composition == {"ring": 0.5, "trophozoite": 0.25, "schizont": 0.25, "overdue": 0.0}


def test_stage_composition_of_age_grid():
    mesh = AgeMesh(da=0.5, a_max=54.0)
    p_grid = np.zeros(mesh.n_cells)
    p_grid[100] = 1.0
    p_grid[10] = 3.0
    state = PdeState(r_r=1.0, r_m=1.0, r_s=1.0, p_grid=p_grid, m=0.0, g=0.0)
    composition = stage_composition(state, mesh)
    assert composition["overdue"] == pytest.approx(0.25)
    assert composition["ring"] == pytest.approx(0.75)
    assert sum(composition.values()) == pytest.approx(1.0)


def test_stage_composition_of_uninfected_state(table_params):
    composition = stage_composition(initial_ode_state(table_params))
    assert all(value == 0.0 for value in composition.values())


def test_trajectory_distance():
    reference = _trajectory([0, 1, 2, 3], [1.0, 2.0, 3.0, 4.0])
    assert trajectory_distance(reference, reference) == 0.0
    scaled = _trajectory([0, 1, 2, 3], [1.1, 2.2, 3.3, 4.4])
    assert trajectory_distance(scaled, reference) == pytest.approx(0.1)


def test_trajectory_distance_uses_common_times_only():
    reference = _trajectory([0, 1, 2], [1.0, 1.0, 1.0])
    candidate = _trajectory([1, 2, 3], [1.0, 1.0, 50.0])
    assert trajectory_distance(candidate, reference) == 0.0
    with pytest.raises(ValueError):
        trajectory_distance(_trajectory([5, 6], [1.0, 1.0]), reference)


def test_trajectory_distance_to_zero_reference():
    zero = _trajectory([0, 1], [0.0, 0.0])
    assert trajectory_distance(zero, zero) == 0.0
    assert trajectory_distance(_trajectory([0, 1], [1.0, 0.0]), zero) == math.inf


def test_many_compartments_track_age_structured_model(growth_params):
    mesh = AgeMesh(da=0.05, a_max=54.0)
    pde = simulate_pde(initial_pde_state(growth_params, mesh), PdeSimConfig(t_end=960.0, record_every=24.0),
                       growth_params, mesh)

    def ode(k):
        params = growth_params.with_overrides(k_stages=k)
        return simulate_ode(initial_ode_state(params), OdeSimConfig(dt=0.05, t_end=960.0, record_every=24.0),
                            params)

    assert trajectory_distance(ode(100), pde) < 0.10
    # a single compartment releases merozoites too early
    assert ode(1).gametocytes[5] > pde.gametocytes[5]
