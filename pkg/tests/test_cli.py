import json

import numpy as np
import pandas as pd
import pytest
import yaml

from src.cli.main import build_parser, main

CONFIG = {
    "model": {"preset": "table", "species": "falciparum", "k_stages": 50},
    "presets": {"table": {}, "growth": {"beta": 1.2e-10}},
    "species": {"falciparum": {"gamma_r": 1, "gamma_m": 1, "gamma_s": 1}},
    "patients": {"S1": {"mu_g": 1.0e-3, "alpha_g": 1.0e-7, "m0": 1.0e7}},
    "solver": {"ode": {"dt": 0.05, "record_every": 1.0}, "pde": {"da": 0.05, "a_max": 54.0, "record_every": 1.0},
               "t_end": 960.0},
    "fitting": {"k_range": [50, 50], "n_starts": 1, "max_iter": 2, "dt": 0.5, "da": 0.5},
    "regression": {"lag": 2.0, "window": [2.0, 30.0], "search": [4.0, 28.0]},
    "synthetic": {"days": 8, "noise_cv": 0.0, "seed": 7},
    "logging": {"level": "WARNING", "json": True},
    "run": {},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(CONFIG))
    return path


@pytest.fixture
def run_cli(config_file, tmp_path):
    out = tmp_path / "out"

    def run(*args):
        command, rest = args[0], list(args[1:])
        return main(["--config", str(config_file), command, "--out", str(out)] + rest)

    run.out = out
    return run


def _error_line(capsys):
    lines = [line for line in capsys.readouterr().err.splitlines() if line.strip()]
    return json.loads(lines[-1])


def test_parser_knows_every_command():
    parser = build_parser()
    args = parser.parse_args(["survival", "--k", "1,10", "--at", "48"])
    assert args.command == "survival"
    assert args.k == "1,10"


def test_survival_table(run_cli, capsys):
    assert run_cli("survival", "--k", "1,10,50", "--at", "48") == 0
    frame = pd.read_csv(run_cli.out / "survival.csv")
    values = dict(zip(frame["model"], frame["survival"]))
    assert values["ode_k1"] == pytest.approx(0.3679, abs=1e-3)
    assert values["ode_k10"] == pytest.approx(0.4579, abs=1e-3)
    assert values["ode_k50"] == pytest.approx(0.4812, abs=1e-3)
    assert values["pde"] == 1.0
    assert "ode_k10" in capsys.readouterr().out


def test_r0_table(run_cli):
    assert run_cli("r0", "--k", "1,100", "--preset", "growth") == 0
    frame = pd.read_csv(run_cli.out / "r0.csv")
    assert list(frame["model"]) == ["ode_k1", "ode_k100", "pde"]
    assert (frame["r0"] > 1.0).all()
    assert {"infection_probability", "survival_factor", "production_factor"} <= set(frame.columns)


def test_simulate_without_inoculum(run_cli, capsys):
    assert run_cli("simulate", "--m0", "0", "--t-end", "2d", "--dt", "0.5") == 0
    path = run_cli.out / "ode_k50.csv"
    assert str(path) in capsys.readouterr().out
    frame = pd.read_csv(path)
    assert len(frame) == 49
    assert (frame["gametocytes"] == 0).all()


def test_simulate_age_structured_model(run_cli):
    assert run_cli("simulate", "--model", "pde", "--da", "0.5", "--t-end", "1d") == 0
    frame = pd.read_csv(run_cli.out / "pde_da0.5.csv")
    np.testing.assert_allclose(frame["t_hours"], np.arange(25.0))


def test_compare_table(run_cli):
    assert run_cli("compare", "--k", "1,10", "--t-end", "3d", "--dt", "0.5", "--da", "0.5", "--preset",
                   "growth") == 0
    frame = pd.read_csv(run_cli.out / "compare.csv")
    assert list(frame["k"]) == [1, 10]
    assert np.isfinite(frame["gametocyte_distance"]).all()


def test_synthesize_then_fit(run_cli, capsys):
    assert run_cli("synthesize", "--patient", "S1", "--dt", "0.5") == 0
    manifest = run_cli.out / "manifest.yaml"
    assert str(manifest) in capsys.readouterr().out
    assert yaml.safe_load(manifest.read_text())["patients"] == {"S1": "patients/S1.csv"}
    patient = pd.read_csv(run_cli.out / "patients" / "S1.csv")
    assert list(patient["day"]) == list(range(9))

    assert run_cli("fit", "--data", str(manifest), "--metrics") == 0
    results = pd.read_csv(run_cli.out / "fit_results.csv")
    assert list(results["patient_id"]) == ["S1"]
    assert results["k_opt"].iloc[0] == 50
    assert "gametodyn_fits_total" in (run_cli.out / "metrics.prom").read_text()
    assert not list(run_cli.out.glob(".metrics.prom.*"))


def test_numerical_failure_exit_code(run_cli, capsys):
    assert run_cli("simulate", "--m0", "0", "--t-end", "31d", "--dt", "1") == 0
    capsys.readouterr()
    assert run_cli("regress", "--data", str(run_cli.out / "ode_k50.csv")) == 3
    error = _error_line(capsys)
    assert error["error"] == "numerical"
    assert error["exit_code"] == 3


@pytest.mark.parametrize("args", [
    ["simulate", "--set", "nonsense=1"],
    ["simulate", "--set", "beta=-1"],
    ["simulate", "--preset", "unknown"],
    ["fit"],
    ["survival", "--k", "one"],
])
def test_configuration_errors_exit_2(run_cli, capsys, args):
    assert run_cli(*args) == 2
    error = _error_line(capsys)
    assert error["exit_code"] == 2
    assert error["message"]


def test_unknown_command(config_file, capsys):
    assert main(["--config", str(config_file), "explode"]) == 2
    assert _error_line(capsys)["error"] == "config"


def test_missing_config_file(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "absent.yaml"), "r0"]) == 2
    assert _error_line(capsys)["error"] == "io"


def test_transfer_writes_both_objectives(run_cli):
    assert run_cli("synthesize", "--patient", "S1", "--dt", "0.5") == 0
    assert run_cli("fit", "--data", str(run_cli.out / "manifest.yaml"), "--transfer-pde") == 0
    transfer = pd.read_csv(run_cli.out / "pde_transfer.csv")
    assert list(transfer.columns) == ["patient_id", "ode_sse", "pde_sse"]
    assert list(transfer["patient_id"]) == ["S1"]
    assert np.isfinite(transfer["pde_sse"]).all()


def test_short_patient_series_exit_2(run_cli, tmp_path, capsys):
    (tmp_path / "short.csv").write_text("day,gametocytes_per_ml\n0,0\n1,10\n2,100\n3,1000\n")
    manifest = tmp_path / "manifest.yaml"
    manifest.write_text(yaml.safe_dump({"patients": {"short": "short.csv"}}))
    assert run_cli("fit", "--data", str(manifest), "--k-range", "1,1") == 2
    error = _error_line(capsys)
    assert error["error"] == "config"
    assert "at least 5 observations" in error["message"]
    assert not (run_cli.out / "fit_results.csv").exists()
