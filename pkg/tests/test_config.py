from pathlib import Path

import pytest

from src.cli.settings import (RunConfig, build_fit_problem, build_params, build_run_config, parse_assignment,
                              parse_duration_list, parse_int_list)
from src.models.data_models import PatientSeries, default_params
from src.utils.config import DEFAULT_CONFIG_PATH, Config, get_config, load_config, reload_config
from src.utils.errors import ConfigError

REPO_CONFIG = Config(DEFAULT_CONFIG_PATH)


def test_repository_config_loads():
    assert REPO_CONFIG.get("model.k_stages") == 50
    assert REPO_CONFIG.get("solver.ode.dt") == 0.05
    assert REPO_CONFIG.get("missing.key", "fallback") == "fallback"
    assert len(REPO_CONFIG.list_patients()) == 12
    assert REPO_CONFIG.get_solver_config("pde")["t_end"] == 960.0


def test_named_entries():
    assert REPO_CONFIG.get_preset("growth") == {"beta": 1.2e-10}
    assert REPO_CONFIG.get_species("vivax") == {"gamma_r": 1, "gamma_m": 0, "gamma_s": 0}
    assert REPO_CONFIG.get_patient("S1300")["m0"] == 2.5e7
    with pytest.raises(ConfigError, match="known"):
        REPO_CONFIG.get_preset("nonexistent")


def test_log_file_follows_environment(monkeypatch):
    monkeypatch.delenv("GAMETODYN_LOG_FILE", raising=False)
    assert REPO_CONFIG.get_logging_config()["file"] is None
    monkeypatch.setenv("GAMETODYN_LOG_FILE", "/var/log/gametodyn.log")
    assert REPO_CONFIG.get_logging_config()["file"] == "/var/log/gametodyn.log"


def test_invalid_files(tmp_path):
    broken = tmp_path / "broken.yaml"
    broken.write_text("model: [unclosed\n")
    with pytest.raises(ConfigError):
        Config(broken)
    listing = tmp_path / "list.yaml"
    listing.write_text("- a\n- b\n")
    with pytest.raises(ConfigError):
        Config(listing)
    with pytest.raises(FileNotFoundError):
        Config(tmp_path / "absent.yaml")


def test_empty_file_is_empty_config(tmp_path):
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert Config(empty).get_fitting_config() == {}


def test_parse_helpers():
    assert parse_int_list("1, 10,50") == [1, 10, 50]
    assert parse_int_list(7) == [7]
    assert parse_duration_list("24,2d") == [24.0, 48.0]
    assert parse_assignment("k_stages=10") == ("k_stages", 10)
    assert parse_assignment("beta = 1e-10") == ("beta", 1e-10)
    assert parse_assignment("innate_mode=proportional") == ("innate_mode", "proportional")
    with pytest.raises(ConfigError):
        parse_assignment("beta")
    with pytest.raises(ConfigError):
        parse_int_list("1,x")


def test_flags_override_run_section():
    config = Config.from_dict({"model": {"preset": "growth", "k_stages": 20},
                               "run": {"k": "10", "seed": 5, "t_end": "10d"}})
    run = build_run_config("simulate", {"k": "1,2", "dt": None}, config)
    assert run.k_values == [1, 2]
    assert run.seed == 5
    assert run.t_end == 240.0
    assert run.preset == "growth"


def test_model_section_supplies_default_k():
    run = build_run_config("simulate", {}, Config.from_dict({"model": {"k_stages": 20}}))
    assert run.k_values == [20]


def test_unknown_run_key():
    with pytest.raises(ConfigError):
        build_run_config("simulate", {}, Config.from_dict({"run": {"colour": "blue"}}))


def test_overrides_merge_across_layers():
    config = Config.from_dict({"run": {"set": {"beta": 1e-10, "m0": 3.0}}})
    run = build_run_config("simulate", {"set": ["m0=5"], "m0": None}, config)
    assert run.overrides == {"beta": 1e-10, "m0": 5}


def test_parameter_layers():
    config = Config.from_dict({
        "presets": {"growth": {"beta": 1.2e-10, "m0": 1.0}},
        "species": {"vivax": {"gamma_m": 0, "gamma_s": 0}},
        "patients": {"P": {"m0": 2.0, "alpha_g": 0.1}},
    })
    run = RunConfig(command="simulate", preset="growth", species="vivax", patient="P", overrides={"alpha_g": 0.2})
    params = build_params(run, config, k_stages=7)
    assert params.k_stages == 7
    assert params.beta == 1.2e-10
    assert params.m0 == 2.0
    assert params.alpha_g == 0.2
    assert (params.gamma_r, params.gamma_m, params.gamma_s) == (1, 0, 0)


def test_table_preset_is_the_default_parameter_set():
    run = build_run_config("simulate", {}, REPO_CONFIG)
    assert build_params(run, REPO_CONFIG) == default_params()


def test_run_config_requirements():
    with pytest.raises(ValueError):
        RunConfig(command="fit")
    with pytest.raises(ValueError):
        RunConfig(command="compare", k_values=[])
    with pytest.raises(ValueError):
        RunConfig(command="simulate", overrides={"colour": 1})
    assert RunConfig(command="fit", data=Path("m.yaml")).out == Path("out")


def test_fit_problem_from_config():
    series = PatientSeries(patient_id="P", days=(0, 1, 2, 3, 4), gametocyte_density=(0.0, 1.0, 2.0, 3.0, 4.0))
    run = build_run_config("fit", {"data": "m.yaml", "k_range": "5,9", "objective": "linear"}, REPO_CONFIG)
    problem = build_fit_problem(run, REPO_CONFIG, series)
    assert problem.k_grid == [5, 6, 7, 8, 9]
    assert problem.objective_scale == "linear"
    assert problem.bounds["m0"] == (1.0e5, 1.0e9)
    assert problem.n_starts == 8
    assert problem.dt == 0.25


def test_global_instance_follows_load_and_reload(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("model:\n  k_stages: 7\n")
    assert load_config(path) is get_config()
    assert get_config().get("model.k_stages") == 7
    assert reload_config().get("model.k_stages") == 50
