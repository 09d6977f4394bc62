"""
Run configuration for the command-line interface.

Values are layered: built-in defaults, then the config file (model section,
selected preset, species and patient entries, flat run keys), then flags.
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..core.units import parse_duration
from ..models.data_models import DEFAULT_BOUNDS, FitProblem, ModelParams, PatientSeries, default_params
from ..utils.config import Config
from ..utils.errors import ConfigError

COMMANDS = ("simulate", "fit", "compare", "regress", "survival", "r0", "synthesize")

# Flag destinations that may also be given as flat keys in the config file's run section
RUN_KEYS = ("model", "k", "k_range", "k_step", "t_end", "dt", "da", "set", "data", "out", "seed", "objective",
            "preset", "species", "patient", "at", "lag", "noise_cv", "transfer_pde", "metrics", "log_level",
            "m0", "workers")


def parse_int_list(text) -> List[int]:
    """'1,10,50' -> [1, 10, 50]."""
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    if isinstance(text, int):
        return [text]
    try:
        return [int(part) for part in str(text).split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"Invalid integer list: {text!r}")


def parse_duration_list(text) -> List[float]:
    """'24,48,2d' -> hours."""
    if isinstance(text, (list, tuple)):
        return [parse_duration(v) for v in text]
    return [parse_duration(part.strip()) for part in str(text).split(",") if part.strip()]


def parse_assignment(text: str) -> Tuple[str, Any]:
    """'name=value' with int, float or string value."""
    if "=" not in text:
        raise ConfigError(f"Expected <param>=<value>, got {text!r}")
    name, raw = (part.strip() for part in text.split("=", 1))
    for cast in (int, float):
        try:
            return name, cast(raw)
        except ValueError:
            continue
    return name, raw


class RunConfig(BaseModel):
    """Everything one command needs."""

    model_config = ConfigDict(frozen=True, protected_namespaces=())

    command: Literal["simulate", "fit", "compare", "regress", "survival", "r0", "synthesize"]
    model_kind: Literal["ode", "pde"] = "ode"
    k_values: List[int] = Field(default_factory=lambda: [50])
    k_range: Optional[Tuple[int, int]] = None
    k_step: Optional[int] = Field(None, ge=1)
    t_end: float = Field(960.0, gt=0, description="Horizon, hours")
    dt: Optional[float] = Field(None, gt=0, description="ODE step, hours")
    da: Optional[float] = Field(None, gt=0, description="PDE age step, hours")
    overrides: Dict[str, Any] = Field(default_factory=dict)
    preset: str = "table"
    species: Optional[str] = None
    patient: Optional[str] = None
    data: Optional[Path] = None
    out: Path = Path("out")
    seed: int = Field(20240601, ge=0, lt=2 ** 64)
    objective: Literal["log10", "linear"] = "log10"
    at: List[float] = Field(default_factory=lambda: [48.0])
    lag: float = Field(2.0, ge=0, description="Regression lag, days")
    noise_cv: float = Field(0.0, ge=0, lt=1)
    transfer_pde: bool = False
    metrics: bool = False
    log_level: str = "INFO"
    workers: Optional[int] = Field(None, ge=1)

    @field_validator("overrides")
    @classmethod
    def overrides_name_params(cls, v):
        unknown = sorted(set(v) - set(ModelParams.model_fields))
        if unknown:
            raise ValueError(f"Unknown model parameter(s): {', '.join(unknown)}")
        return v

    @field_validator("k_values")
    @classmethod
    def k_values_positive(cls, v):
        if any(k < 1 for k in v):
            raise ValueError("Compartment counts must be >= 1")
        return v

    @model_validator(mode="after")
    def command_requirements(self):
        if self.command == "compare" and not self.k_values:
            raise ValueError("compare needs a nonempty --k list")
        if self.command == "fit" and self.data is None:
            raise ValueError("fit needs --data <manifest>")
        return self


def _normalise(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Map flag-style keys onto RunConfig fields."""
    out: Dict[str, Any] = {}
    overrides: Dict[str, Any] = {}
    for key, value in raw.items():
        if value is None:
            continue
        key = key.replace("-", "_")
        if key not in RUN_KEYS and key != "command":
            raise ConfigError(f"Unknown run setting: {key}")
        if key == "model":
            out["model_kind"] = value
        elif key == "k":
            out["k_values"] = parse_int_list(value)
        elif key == "k_range":
            bounds = parse_int_list(value)
            if len(bounds) != 2:
                raise ConfigError(f"k_range needs two integers, got {value!r}")
            out["k_range"] = tuple(bounds)
        elif key in ("t_end", "dt", "da"):
            out[key] = parse_duration(value)
        elif key == "at":
            out["at"] = parse_duration_list(value)
        elif key == "set":
            items = value.items() if isinstance(value, dict) else (parse_assignment(v) for v in value)
            overrides.update(items)
        elif key == "m0":
            overrides["m0"] = float(value)
        elif key == "objective":
            out["objective"] = "log10" if value in ("log", "log10") else value
        else:
            out[key] = value
    if overrides:
        out["overrides"] = overrides
    return out


def build_run_config(command: str, flags: Dict[str, Any], config: Config) -> RunConfig:
    """
    Merge config-file run keys with command-line flags.

    Raises:
        ConfigError: Unknown keys or invalid values
    """
    merged = _normalise(config.get_run_config())
    from_flags = _normalise(flags)
    overrides = {**merged.get("overrides", {}), **from_flags.get("overrides", {})}
    merged.update(from_flags)
    if overrides:
        merged["overrides"] = overrides
    merged.setdefault("preset", config.get("model.preset", "table"))
    merged.setdefault("species", config.get("model.species"))
    if "k_values" not in merged and config.get("model.k_stages") is not None:
        merged["k_values"] = [int(config.get("model.k_stages"))]
    try:
        return RunConfig(command=command, **merged)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {e}") from e


def build_params(run: RunConfig, config: Config, k_stages: Optional[int] = None) -> ModelParams:
    """
    Model parameters for a run: defaults < preset < species < patient < --set.
    """
    layers: Dict[str, Any] = {}
    layers.update(config.get_preset(run.preset))
    if run.species:
        layers.update(config.get_species(run.species))
    if run.patient:
        layers.update(config.get_patient(run.patient))
    layers.update(run.overrides)
    k = k_stages if k_stages is not None else layers.pop("k_stages", run.k_values[0])
    layers.pop("k_stages", None)
    return default_params(k_stages=int(k), **layers)


def build_fit_problem(run: RunConfig, config: Config, series: PatientSeries) -> FitProblem:
    """FitProblem from the fitting section of the config and the run flags."""
    settings = dict(config.get_fitting_config())
    bounds = {name: tuple(float(v) for v in pair) for name, pair in (settings.get("bounds") or {}).items()}
    try:
        return FitProblem(
            data=series,
            model_kind=run.model_kind,
            bounds=bounds or dict(DEFAULT_BOUNDS),
            k_range=run.k_range or tuple(settings.get("k_range", (1, 100))),
            k_step=run.k_step or int(settings.get("k_step", 1)),
            objective_scale=run.objective if "objective" in run.model_fields_set else settings.get("objective", "log10"),
            epsilon=float(settings.get("epsilon", 1.0)),
            base_params=build_params(run, config),
            n_starts=int(settings.get("n_starts", 8)),
            max_iter=int(settings.get("max_iter", 400)),
            xatol=float(settings.get("xatol", 1e-4)),
            fatol=float(settings.get("fatol", 1e-10)),
            dt=run.dt or float(settings.get("dt", 0.25)),
            da=run.da or float(settings.get("da", 0.25)),
            workers=run.workers or int(settings.get("workers", 1)),
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid fit settings: {e}") from e
