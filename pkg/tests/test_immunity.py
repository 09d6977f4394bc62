import numpy as np
import pytest

from src.core.immunity import (ImmuneState, accumulate, adaptive_response, innate_response,
                               merozoite_immune_terms, window_overlap)


def test_innate_response_half_effect(table_params):
    assert innate_response(table_params.si_star, table_params.si_star) == pytest.approx(0.5)
    assert innate_response(0.0, table_params.si_star) == 0.0
    assert 0.0 <= innate_response(1e12, table_params.si_star) < 1.0


def test_adaptive_response_off_before_delay(table_params):
    assert adaptive_response(100.0, 1e9, table_params.sa_star, table_params.delta0) == 0.0
    value = adaptive_response(400.0, table_params.sa_star, table_params.sa_star, table_params.delta0)
    assert value == pytest.approx(0.5)


def test_adaptive_response_vectorised():
    values = adaptive_response(400.0, np.array([0.0, 1.0, 3.0]), 1.0, np.array([384.0, 384.0, 500.0]))
    np.testing.assert_allclose(values, [0.0, 0.5, 0.0])


@pytest.mark.parametrize("t,dt,expected", [
    (0.0, 1.0, 0.0),
    (383.5, 1.0, 0.5),
    (400.0, 2.0, 2.0),
    (575.5, 1.0, 0.5),
    (600.0, 1.0, 0.0),
])
def test_window_overlap(t, dt, expected):
    assert window_overlap(t, dt, 384.0, 192.0) == pytest.approx(expected)


def test_accumulate_only_inside_window(table_params):
    state = ImmuneState()
    state = accumulate(state, 0.0, 1.0, 1e6, table_params)
    assert state.cum_m == 0.0
    state = accumulate(state, 384.0, 2.0, 1e6, table_params)
    assert state.cum_m == pytest.approx(2e6)


def test_accumulate_freezes_after_window(table_params):
    state = ImmuneState(cum_m=5.0)
    assert accumulate(state, 700.0, 1.0, 1e6, table_params) is state


def test_accumulate_rejects_nonpositive_step(table_params):
    with pytest.raises(ValueError):
        accumulate(ImmuneState(), 400.0, 0.0, 1.0, table_params)


def test_immune_state_nonnegative():
    with pytest.raises(ValueError):
        ImmuneState(cum_m=-1.0)


def test_immune_terms_verbatim_and_proportional(table_params):
    m = table_params.si_star
    absolute, rate = merozoite_immune_terms(m, 0.0, 0.0, table_params.si_star, table_params.sa_star,
                                            table_params.delta0)
    assert absolute == pytest.approx(0.5)
    assert rate == pytest.approx(0.0)

    absolute, rate = merozoite_immune_terms(m, 0.0, 0.0, table_params.si_star, table_params.sa_star,
                                            table_params.delta0, proportional=True)
    assert absolute == pytest.approx(0.0)
    assert rate == pytest.approx(0.5)
