"""
Derived quantities: parasitemia, within-host R0 and trajectory comparison.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Literal, Optional, Union

import numpy as np

from ..models.data_models import ModelParams, OdeState, PdeState, Trajectory
from .pde_model import AgeMesh
from .rbc_dynamics import equilibrium

logger = logging.getLogger(__name__)

# Intracellular stage boundaries, hours of infection age
STAGE_BOUNDS = {
    "ring": (0.0, 26.0),
    "trophozoite": (26.0, 38.0),
    "schizont": (38.0, 48.0),
    "overdue": (48.0, math.inf),
}


def parasitemia(state: Union[OdeState, PdeState], mesh: Optional[AgeMesh] = None) -> float:
    """
    Fraction of red blood cells that are parasitized.

    Args:
        state: ODE or PDE state
        mesh: Age grid, required for a PDE state

    Raises:
        ValueError: No red blood cells at all, or a PDE state without mesh
    """
    if isinstance(state, PdeState):
        if mesh is None:
            raise ValueError("A PDE state needs its AgeMesh to compute parasitemia")
        infected = float(mesh.total(state.p_grid))
    else:
        infected = float(np.sum(state.p))
    total = infected + state.r_r + state.r_m + state.r_s
    if total <= 0:
        raise ValueError("Parasitemia undefined: no red blood cells in the state")
    return infected / total


@dataclass(frozen=True)
class R0Breakdown:
    """Factors of the within-host reproduction number."""

    model: str
    infection_probability: float
    asexual_fraction: float
    burst_size: float
    production_factor: float
    survival_factor: float
    susceptible_total: float

    @property
    def r0(self) -> float:
        return (self.infection_probability * self.asexual_fraction * self.burst_size
                * self.production_factor * self.survival_factor * self.susceptible_total)

    def as_dict(self) -> Dict[str, float]:
        return {
            "infection_probability": self.infection_probability,
            "asexual_fraction": self.asexual_fraction,
            "burst_size": self.burst_size,
            "production_factor": self.production_factor,
            "survival_factor": self.survival_factor,
            "susceptible_total": self.susceptible_total,
            "r0": self.r0,
        }


def r0_breakdown(params: ModelParams, model: Literal["ode", "pde"] = "ode",
                 include_production_factor: bool = True) -> R0Breakdown:
    """
    Offspring of one newly parasitized cell in an uninfected host, factor by factor.

    A merozoite infects before dying with probability
    beta/(mu_m + beta*sum(gamma*R*)); the infected cell survives to rupture with
    prod mu_i/(mu_i + d_i) in the ODE model, exp(-dev_time*d0) times
    mu_bar/(mu_bar + d0) in the PDE model.
    """
    eq = equilibrium(params)
    susceptible = float(np.dot(params.gammas, eq.as_array()))
    denominator = params.mu_mero + params.beta * susceptible
    infection = params.beta / denominator if denominator > 0 else 0.0

    if model == "ode":
        mu = params.stage_rates
        production = 1.0
        survival = float(np.prod(mu / (mu + params.stage_deaths)))
    elif model == "pde":
        rates = params.mu_bar + params.d0
        production = params.mu_bar / rates if rates > 0 else 0.0
        if not include_production_factor:
            production = 1.0
        survival = math.exp(-params.dev_time * params.d0)
    else:
        raise ValueError(f"Unknown model kind: {model}")

    return R0Breakdown(model=model, infection_probability=infection, asexual_fraction=1.0 - params.alpha_g,
                       burst_size=params.r_burst, production_factor=production, survival_factor=survival,
                       susceptible_total=susceptible)


def r0_ode(params: ModelParams) -> float:
    """Within-host R0 of the K-compartment model."""
    return r0_breakdown(params, "ode").r0


def r0_pde(params: ModelParams, include_production_factor: bool = True) -> float:
    """Within-host R0 of the age-structured model."""
    return r0_breakdown(params, "pde", include_production_factor).r0


def stage_composition(state: Union[OdeState, PdeState], mesh: Optional[AgeMesh] = None,
                      dev_time: float = 48.0) -> Dict[str, float]:
    """
    Share of pRBC in each intracellular stage.

    PDE cells are classified by midpoint age. ODE compartment l is placed at
    its mean age (l - 0.5) * dev_time / K, so it never counts as overdue.
    Returns zeros when no cell is parasitized.
    """
    if isinstance(state, PdeState):
        if mesh is None:
            raise ValueError("A PDE state needs its AgeMesh for stage composition")
        ages = mesh.cell_midpoints
        mass = state.p_grid * mesh.da
    else:
        k = state.k_stages
        ages = (np.arange(k) + 0.5) * dev_time / k
        mass = np.asarray(state.p, dtype=float)

    total = float(mass.sum())
    composition = {}
    for stage, (lo, hi) in STAGE_BOUNDS.items():
        inside = (ages >= lo) & (ages < hi)
        composition[stage] = float(mass[inside].sum()) / total if total > 0 else 0.0
    return composition


def trajectory_distance(candidate: Trajectory, reference: Trajectory, column: str = "gametocytes") -> float:
    """
    Relative L2 distance ||a - b|| / ||b|| over the common sample times.

    Raises:
        ValueError: No common sample times
    """
    common, ia, ib = np.intersect1d(np.round(candidate.times, 9), np.round(reference.times, 9),
                                    return_indices=True)
    if len(common) == 0:
        raise ValueError("Trajectories share no sample times")
    a = getattr(candidate, column)[ia]
    b = getattr(reference, column)[ib]
    norm = float(np.linalg.norm(b))
    diff = float(np.linalg.norm(a - b))
    if norm == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / norm
