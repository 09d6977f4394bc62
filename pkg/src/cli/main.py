"""
Gametodyn command-line interface.

    python -m src.cli.main <command> [flags]

Commands write tidy CSV files into --out and print a short CSV summary on
stdout. Exit codes: 0 success, 2 configuration error, 3 numerical failure;
failures also print one JSON line on stderr.
"""

import argparse
import json
import sys
import time
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from ..core.analysis import r0_breakdown, trajectory_distance
from ..core.ode_model import OdeSimConfig, chain_survival, initial_ode_state, simulate_ode, stage_grid
from ..core.pde_model import (DEFAULT_A_MAX, AgeMesh, PdeSimConfig, RuptureFunction, initial_pde_state,
                              pde_survival, simulate_pde)
from ..core.regression import fit_two_regime
from ..models.data_models import DatasetManifest, Trajectory
from ..services.data_io import (atomic_write, generate_synthetic, load_manifest, read_trajectory_csv,
                                write_fit_results_csv, write_manifest, write_patient_csv, write_regression_csv,
                                write_table_csv, write_trajectory_csv)
from ..services.fitting import fit_dataset
from ..utils.config import Config, get_config, load_config
from ..utils.errors import ConfigError, GametodynError
from ..utils.logging import LogContext, PerformanceLogger, get_logger, setup_logging
from ..utils.metrics import get_metrics
from .settings import COMMANDS, RunConfig, build_fit_problem, build_params, build_run_config

logger = get_logger(__name__)


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they share exit code 2 and the JSON error line."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="gametodyn", description="Within-host malaria gametocyte dynamics")
    parser.add_argument("--config", help="YAML configuration file (default: config.yaml)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--model", choices=["ode", "pde"])
        p.add_argument("--k", help="Comma-separated compartment counts, e.g. 1,10,50")
        p.add_argument("--t-end", help="Horizon, e.g. 40d or 960h")
        p.add_argument("--dt", help="ODE step")
        p.add_argument("--da", help="PDE age step")
        p.add_argument("--set", action="append", metavar="PARAM=VALUE", help="Model parameter override")
        p.add_argument("--m0", type=float, help="Initial merozoite density, cells/ml")
        p.add_argument("--preset", help="Named parameter preset from the config")
        p.add_argument("--species", help="RBC-age preference preset")
        p.add_argument("--patient", help="Patient estimates from the config")
        p.add_argument("--data", help="Manifest (fit) or trajectory CSV (regress)")
        p.add_argument("--out", help="Output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--log-level")
        p.add_argument("--metrics", action="store_true", default=None, help="Write metrics.prom into --out")
        if name == "fit":
            p.add_argument("--objective", choices=["log", "log10", "linear"])
            p.add_argument("--k-range", help="LO,HI compartment range")
            p.add_argument("--k-step", type=int)
            p.add_argument("--workers", type=int)
            p.add_argument("--transfer-pde", action="store_true", default=None)
        if name == "survival":
            p.add_argument("--at", help="Comma-separated ages, e.g. 24,48,72")
        if name == "regress":
            p.add_argument("--lag", type=float, help="First-regime lag, days")
        if name == "synthesize":
            p.add_argument("--noise-cv", type=float)
    return parser


def _ode_config(run: RunConfig, config: Config) -> OdeSimConfig:
    solver = config.get_solver_config("ode")
    return OdeSimConfig(dt=run.dt or float(solver.get("dt", 0.05)), t_end=run.t_end,
                        record_every=float(solver.get("record_every", 1.0)),
                        clamp_negative=bool(solver.get("clamp_negative", True)))


def _mesh(run: RunConfig, config: Config) -> AgeMesh:
    solver = config.get_solver_config("pde")
    return AgeMesh(da=run.da or float(solver.get("da", 0.05)), a_max=float(solver.get("a_max", DEFAULT_A_MAX)))


def _run_pde(run: RunConfig, config: Config, params) -> Trajectory:
    mesh = _mesh(run, config)
    solver = config.get_solver_config("pde")
    sim = PdeSimConfig(t_end=run.t_end, record_every=float(solver.get("record_every", 1.0)))
    return simulate_pde(initial_pde_state(params, mesh), sim, params, mesh)


def _run_ode(run: RunConfig, config: Config, params) -> Trajectory:
    return simulate_ode(initial_ode_state(params), _ode_config(run, config), params)


def _emit(frame: pd.DataFrame):
    sys.stdout.write(frame.to_csv(index=False, float_format="%.6g"))


def cmd_simulate(run: RunConfig, config: Config) -> List[Path]:
    """One trajectory CSV per requested (model, K)."""
    perf = PerformanceLogger(logger)
    runs = []
    if run.model_kind == "pde":
        mesh = _mesh(run, config)
        runs.append((run.out / f"pde_da{mesh.da:g}.csv", lambda: _run_pde(run, config, build_params(run, config))))
    else:
        for k in stage_grid(run.k_values):
            runs.append((run.out / f"ode_k{k}.csv",
                         lambda k=k: _run_ode(run, config, build_params(run, config, k_stages=k))))

    written = []
    for path, simulate in runs:
        start = time.perf_counter()
        traj = simulate()
        perf.log_simulation(run.model_kind, records=len(traj), duration=time.perf_counter() - start)
        write_trajectory_csv(traj, path)
        written.append(path)
    for path in written:
        print(path)
    return written


def cmd_fit(run: RunConfig, config: Config) -> Path:
    """Fit every patient of the manifest; one result row per patient."""
    manifest = load_manifest(run.data)
    outcomes = fit_dataset(manifest, lambda series: build_fit_problem(run, config, series),
                           transfer=bool(run.transfer_pde))
    if run.transfer_pde:
        results = [outcome.ode for outcome in outcomes]
        transfers = [{"patient_id": o.ode.patient_id, "ode_sse": o.ode.sse, "pde_sse": o.pde_sse} for o in outcomes]
    else:
        results, transfers = outcomes, []

    path = run.out / "fit_results.csv"
    write_fit_results_csv(results, path)
    summary = pd.DataFrame([{"patient_id": r.patient_id, "k_opt": r.k_opt, "alpha_g": r.alpha_g, "m0": r.m0,
                             "mu_g": r.mu_g, "sse": r.sse, "converged": r.converged} for r in results])
    if transfers:
        transfer_frame = pd.DataFrame(transfers)
        write_table_csv(transfer_frame, run.out / "pde_transfer.csv")
        summary = summary.merge(transfer_frame[["patient_id", "pde_sse"]], on="patient_id")
    _emit(summary)
    return path


def cmd_compare(run: RunConfig, config: Config) -> Path:
    """Relative L2 distance of each ODE(K) run to the PDE run."""
    pde = _run_pde(run, config, build_params(run, config))
    rows = []
    for k in stage_grid(run.k_values):
        ode = _run_ode(run, config, build_params(run, config, k_stages=k))
        rows.append({
            "k": k,
            "gametocyte_distance": trajectory_distance(ode, pde, "gametocytes"),
            "parasitemia_distance": trajectory_distance(ode, pde, "parasitemia"),
        })
    frame = pd.DataFrame(rows, columns=["k", "gametocyte_distance", "parasitemia_distance"])
    path = run.out / "compare.csv"
    write_table_csv(frame, path)
    _emit(frame)
    return path


def cmd_regress(run: RunConfig, config: Config) -> Path:
    """Two-regime regression on a trajectory file or on a fresh simulation."""
    settings = config.get_regression_config()
    window = tuple(settings.get("window", (2.0, 30.0)))
    search = tuple(settings.get("search", (4.0, 28.0)))
    lag = run.lag if "lag" in run.model_fields_set else float(settings.get("lag", 2.0))

    if run.data is not None:
        traj = read_trajectory_csv(run.data)
    elif run.model_kind == "pde":
        traj = _run_pde(run, config, build_params(run, config))
    else:
        traj = _run_ode(run, config, build_params(run, config))

    result = fit_two_regime(traj, lag=lag, window=window, search=search)
    label = traj.label or run.model_kind
    path = run.out / "regression.csv"
    write_regression_csv([(label, result)], path)
    _emit(pd.DataFrame([{"label": label, "log10_k1": result.log10_k1, "theta1": result.theta1,
                         "log10_k2": result.log10_k2, "theta2": result.theta2, "t0": result.t0,
                         "r2_first": result.r2_first, "r2_second": result.r2_second}]))
    return path


def cmd_survival(run: RunConfig, config: Config) -> Path:
    """Probability of still being parasitized at each age, per K and for the PDE."""
    params = build_params(run, config)
    rf = RuptureFunction(dev_time=params.dev_time, mu_bar=params.mu_bar)
    rows = []
    for age in run.at:
        for k in stage_grid(run.k_values):
            rows.append({"age_hours": age, "model": f"ode_k{k}", "survival": chain_survival(k, age, params.dev_time)})
        rows.append({"age_hours": age, "model": "pde", "survival": pde_survival(age, rf)})
    frame = pd.DataFrame(rows, columns=["age_hours", "model", "survival"])
    path = run.out / "survival.csv"
    write_table_csv(frame, path)
    _emit(frame)
    return path


def cmd_r0(run: RunConfig, config: Config) -> Path:
    """Both reproduction numbers and their factors."""
    rows = []
    for k in stage_grid(run.k_values):
        rows.append({"model": f"ode_k{k}", **r0_breakdown(build_params(run, config, k_stages=k), "ode").as_dict()})
    rows.append({"model": "pde", **r0_breakdown(build_params(run, config), "pde").as_dict()})
    frame = pd.DataFrame(rows)
    path = run.out / "r0.csv"
    write_table_csv(frame, path)
    _emit(frame)
    return path


def cmd_synthesize(run: RunConfig, config: Config) -> Path:
    """Synthetic patient files plus a manifest listing them."""
    patients = [run.patient] if run.patient else config.list_patients()
    if not patients:
        raise ConfigError("No patients configured; pass --patient or add a patients section")
    days = int(config.get_synthetic_config().get("days", 40))
    noise_cv = run.noise_cv if "noise_cv" in run.model_fields_set else float(
        config.get_synthetic_config().get("noise_cv", 0.0))

    seed = run.seed if "seed" in run.model_fields_set else int(config.get_synthetic_config().get("seed", run.seed))

    entries = []
    for index, patient_id in enumerate(patients):
        params = build_params(run.model_copy(update={"patient": patient_id}), config)
        series = generate_synthetic(params, run.model_kind, noise_cv=noise_cv, seed=seed + index, days=days,
                                    dt=run.dt if run.model_kind == "ode" else None, mesh=_mesh(run, config),
                                    patient_id=patient_id)
        path = run.out / "patients" / f"{patient_id}.csv"
        write_patient_csv(series, path)
        entries.append((patient_id, str(path)))

    manifest_path = run.out / "manifest.yaml"
    write_manifest(DatasetManifest(patients=entries, units="cells/ml",
                                   source=f"synthetic {run.model_kind}, noise_cv={noise_cv}, seed={seed}"),
                   manifest_path)
    print(manifest_path)
    return manifest_path


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "compare": cmd_compare,
    "regress": cmd_regress,
    "survival": cmd_survival,
    "r0": cmd_r0,
    "synthesize": cmd_synthesize,
}


def _fail(error: Exception, exit_code: int, kind: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": str(error), "exit_code": exit_code}) + "\n")
    return exit_code


def main(argv: Optional[List[str]] = None) -> int:
    """Parse flags, run one command and map failures onto exit codes."""
    try:
        args = build_parser().parse_args(argv)
        config = load_config(args.config) if args.config else get_config()
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
        run = build_run_config(args.command, flags, config)

        logging_settings = config.get_logging_config()
        level = run.log_level if "log_level" in run.model_fields_set else logging_settings.get("level", "INFO")
        try:
            setup_logging(log_level=level, json_output=bool(logging_settings.get("json", True)),
                          log_file=logging_settings.get("file") or None)
        except ValueError as e:
            raise ConfigError(str(e)) from e

        start = time.perf_counter()
        with LogContext(logger, command=run.command, model=run.model_kind) as log:
            HANDLERS[run.command](run, config)
            if run.metrics:
                with atomic_write(run.out / "metrics.prom") as handle:
                    handle.write(get_metrics().get_metrics_text())
            log.info("Command finished", duration_ms=(time.perf_counter() - start) * 1000)
        return 0
    except GametodynError as e:
        return _fail(e, e.exit_code, e.kind)
    except ValidationError as e:
        return _fail(e, ConfigError.exit_code, ConfigError.kind)
    except FileNotFoundError as e:
        return _fail(e, ConfigError.exit_code, "io")
    except FloatingPointError as e:
        return _fail(e, 3, "numerical")
    except ValueError as e:
        return _fail(e, ConfigError.exit_code, ConfigError.kind)


if __name__ == "__main__":
    sys.exit(main())
