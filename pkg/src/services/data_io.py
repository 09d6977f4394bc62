"""
Patient data ingestion, synthetic data and result persistence.

Densities are stored in cells/ml everywhere; cells/ul only exists as an
ingestion unit. Writers replace their target atomically.
"""

import math
import os
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from ..core.ode_model import OdeSimConfig, initial_ode_state, simulate_ode
from ..core.pde_model import AgeMesh, PdeSimConfig, initial_pde_state, simulate_pde
from ..models.data_models import (DatasetManifest, FitResult, ModelParams, PatientSeries,
                                  RegressionFit, Trajectory)
from ..utils.errors import ConfigError, DataFormatError
from ..utils.logging import PerformanceLogger, get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

PATIENT_COLUMNS = ("day", "gametocytes_per_ml")
FIT_COLUMNS = ("patient_id", "alpha_g", "m0", "mu_g", "k_opt", "sse", "converged", "model_kind", "evaluations")
REGRESSION_COLUMNS = ("label", "log10_k1", "se_log10_k1", "theta1", "se_theta1", "log10_k2", "se_log10_k2",
                      "theta2", "se_theta2", "t0", "r2_first", "r2_second", "lag", "n_first", "n_second", "sse")
UNIT_FACTORS = {"cells/ml": 1.0, "cells/ul": 1.0e3}
FLOAT_FORMAT = "%.17g"
SYNTHETIC_DAYS = 40


def _unit_factor(units: str) -> float:
    key = units.strip().replace("μ", "u").replace("µ", "u")
    if key not in UNIT_FACTORS:
        raise ConfigError(f"Unsupported density unit: {units} (expected cells/ml or cells/ul)")
    return UNIT_FACTORS[key]


def load_patient_csv(path: PathLike, units: str = "cells/ml", patient_id: Optional[str] = None) -> PatientSeries:
    """
    Read a daily gametocyte series.

    Args:
        path: CSV with header day,gametocytes_per_ml
        units: Density unit of the file; cells/ul values are multiplied by 1e3
        patient_id: Identifier (defaults to the file stem)

    Returns:
        PatientSeries in cells/ml

    Raises:
        FileNotFoundError: Missing file
        DataFormatError: Bad header or row (with line number), duplicate or
            decreasing day, negative density
    """
    path = Path(path)
    factor = _unit_factor(units)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataFormatError("empty file, expected header day,gametocytes_per_ml", path=path)
    except pd.errors.ParserError as e:
        raise DataFormatError(f"malformed CSV: {e}", path=path)

    header = tuple(c.strip() for c in frame.columns)
    if header != PATIENT_COLUMNS:
        raise DataFormatError(f"header must be {','.join(PATIENT_COLUMNS)}, got {','.join(header)}", path=path, line=1)

    days = []
    values = []
    for offset, (day_text, value_text) in enumerate(frame.itertuples(index=False, name=None)):
        line = offset + 2
        try:
            day_value = float(day_text)
            value = float(value_text) * factor
        except ValueError:
            raise DataFormatError(f"cannot parse row '{day_text},{value_text}'", path=path, line=line)
        if not (math.isfinite(day_value) and day_value.is_integer()):
            raise DataFormatError(f"day must be an integer, got '{day_text}'", path=path, line=line)
        day = int(day_value)
        if not math.isfinite(value):
            raise DataFormatError(f"non-finite density on day {day}", path=path, line=line)
        if value < 0:
            raise DataFormatError(f"negative density on day {day}", path=path, line=line)
        if days and day == days[-1]:
            raise DataFormatError(f"duplicate day {day}", path=path, line=line)
        if days and day < days[-1]:
            raise DataFormatError(f"day {day} follows day {days[-1]}; days must increase", path=path, line=line)
        if day < 0:
            raise DataFormatError(f"negative day {day}", path=path, line=line)
        days.append(day)
        values.append(value)

    series = PatientSeries(patient_id=patient_id or path.stem, days=tuple(days), gametocyte_density=tuple(values))
    logger.debug("Patient series loaded", patient_id=series.patient_id, path=str(path), points=len(series))
    return series


def load_manifest(path: PathLike) -> DatasetManifest:
    """
    Read a YAML manifest: units, source and a patients mapping of id to file.

    File paths are resolved against the manifest's directory.
    """
    path = Path(path)
    try:
        with open(path, "r") as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise DataFormatError(f"invalid YAML: {e}", path=path)

    if not isinstance(raw, dict) or not isinstance(raw.get("patients"), dict):
        raise DataFormatError("manifest must be a mapping with a 'patients' mapping", path=path)

    base = path.parent
    patients = [(str(pid), str((base / str(file)).resolve())) for pid, file in raw["patients"].items()]
    try:
        return DatasetManifest(patients=patients, units=raw.get("units", "cells/ml"),
                               source=str(raw.get("source", "")))
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid manifest: {e}") from e


def lognormal_noise(size: int, noise_cv: float, rng: np.random.Generator) -> np.ndarray:
    """Multiplicative factors with mean 1 and coefficient of variation noise_cv."""
    if noise_cv == 0:
        return np.ones(size)
    sigma = math.sqrt(math.log1p(noise_cv ** 2))
    return np.exp(sigma * rng.standard_normal(size) - 0.5 * sigma ** 2)


def generate_synthetic(params: ModelParams, model_kind: Literal["ode", "pde"] = "ode", noise_cv: float = 0.0,
                       seed: int = 0, days: int = SYNTHETIC_DAYS, dt: Optional[float] = None,
                       mesh: Optional[AgeMesh] = None, patient_id: str = "synthetic") -> PatientSeries:
    """
    Daily gametocyte samples of a model run with optional lognormal noise.

    The PRNG is numpy's Philox counter-based generator keyed by seed, so a
    seed gives the same series on every platform.

    Args:
        params: Generating parameters
        model_kind: "ode" or "pde"
        noise_cv: Coefficient of variation of the multiplicative noise, in [0, 1)
        seed: PRNG key
        days: Last sampled day; samples are taken on days 0..days
        dt: Integration step (ODE default 0.05 h; PDE default da)
        mesh: PDE age grid (default da = 0.05 h, a_max = 54 h)
        patient_id: Identifier of the returned series
    """
    if not 0 <= noise_cv < 1:
        raise ConfigError(f"noise_cv must lie in [0, 1), got {noise_cv}")
    t_end = days * 24.0
    if model_kind == "ode":
        config = OdeSimConfig(dt=dt or 0.05, t_end=t_end, record_every=24.0)
        traj = simulate_ode(initial_ode_state(params), config, params)
    elif model_kind == "pde":
        mesh = mesh or AgeMesh()
        config = PdeSimConfig(dt=dt, t_end=t_end, record_every=24.0)
        traj = simulate_pde(initial_pde_state(params, mesh), config, params, mesh)
    else:
        raise ConfigError(f"Unknown model kind: {model_kind}")

    rng = np.random.Generator(np.random.Philox(seed))
    values = np.maximum(traj.gametocytes, 0.0) * lognormal_noise(len(traj), noise_cv, rng)
    day_index = np.rint(traj.days).astype(int)
    return PatientSeries(patient_id=patient_id, days=tuple(day_index.tolist()),
                         gametocyte_density=tuple(values.tolist()))


@contextmanager
def atomic_write(path: PathLike) -> Iterator:
    """Open a temporary file next to path and move it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            yield handle
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _write_frame(frame: pd.DataFrame, path: PathLike):
    start = time.perf_counter()
    with atomic_write(path) as handle:
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT)
    PerformanceLogger(logger).log_file_write(str(path), len(frame), time.perf_counter() - start)


def write_table_csv(frame: pd.DataFrame, path: PathLike):
    """Write any result table atomically at full precision."""
    _write_frame(frame, path)


def write_trajectory_csv(traj: Trajectory, path: PathLike):
    """Write observables at full double precision; an empty trajectory gives a header-only file."""
    _write_frame(traj.to_frame(), path)


def read_trajectory_csv(path: PathLike, label: str = "") -> Trajectory:
    """Read a file written by write_trajectory_csv."""
    path = Path(path)
    frame = pd.read_csv(path, float_precision="round_trip")
    try:
        return Trajectory.from_frame(frame, label=label or path.stem)
    except ValueError as e:
        raise DataFormatError(str(e), path=path)


def write_patient_csv(series: PatientSeries, path: PathLike):
    """Write a series in the ingestion format, cells/ml."""
    frame = pd.DataFrame({"day": list(series.days), "gametocytes_per_ml": list(series.gametocyte_density)},
                         columns=list(PATIENT_COLUMNS))
    _write_frame(frame, path)


def write_fit_results_csv(results: Sequence[FitResult], path: PathLike):
    """One row per patient."""
    rows = [{
        "patient_id": r.patient_id,
        "alpha_g": r.alpha_g,
        "m0": r.m0,
        "mu_g": r.mu_g,
        "k_opt": "" if r.k_opt is None else r.k_opt,
        "sse": r.sse,
        "converged": str(r.converged).lower(),
        "model_kind": r.model_kind,
        "evaluations": r.evaluations,
    } for r in results]
    _write_frame(pd.DataFrame(rows, columns=list(FIT_COLUMNS)), path)


def write_regression_csv(fits: Sequence[Tuple[str, RegressionFit]], path: PathLike):
    """One row per labelled regression; se_ columns are OLS standard errors."""
    rows = [{"label": label, **{c: getattr(f, c) for c in REGRESSION_COLUMNS[1:]}} for label, f in fits]
    _write_frame(pd.DataFrame(rows, columns=list(REGRESSION_COLUMNS)), path)


def write_manifest(manifest: DatasetManifest, path: PathLike):
    """Write a YAML manifest; patient files are stored relative to its directory when possible."""
    path = Path(path)
    patients = {}
    for patient_id, file in manifest.patients:
        file = Path(file)
        try:
            patients[patient_id] = str(file.resolve().relative_to(path.parent.resolve()))
        except ValueError:
            patients[patient_id] = str(file)
    with atomic_write(path) as handle:
        yaml.safe_dump({"units": manifest.units, "source": manifest.source, "patients": patients},
                       handle, sort_keys=False)

