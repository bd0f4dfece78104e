"""Kinetic lattice model of crystal surface relaxation with its
macroscopic limit equations, surface tensions, and experiment drivers."""

__version__ = "0.1.0"

from .config import ExperimentSpec, SpecError, load_spec, parse_spec
from .errors import (BlowUpError, ConvergenceError, DivergenceError,
                     NumericalError, RateOverflowError, StabilityError,
                     StallError, StiffnessError)
from .grid import ContinuumField
from .harness import (RunArtifact, WettingReport, build_tension,
                      initial_profile, lattice_initial, run_experiment,
                      self_similar_iterate, wetting_report)
from .kmc import (GeneratorEstimate, ModelParams, RateIndex, Trajectory,
                  build_rate_index, generator_apply, generator_estimate,
                  run, step, total_rate_at, transition_rate)
from .langevin import langevin_run
from .pde import (EvolveResult, PdeConfig, div_tension, evolve,
                  rhs_rough, rhs_smooth)
from .potential import Potential
from .rng import RandomSource
from .scaling import (CompareResult, ScalingKind, cell_average, compare,
                      project)
from .surface import (HeightField, LatticeShape, SiteMove, apply_move,
                      coordination_number, energy, gradient)
from .tension import (TensionSpec, TensionTable, bar_sigma, free_energy_d,
                      interpolate, sigma_c, sigma_d, tabulate,
                      tilted_mean_continuous, tilted_mean_discrete)

__all__ = [
    "BlowUpError", "CompareResult", "ContinuumField", "ConvergenceError",
    "DivergenceError", "EvolveResult", "ExperimentSpec",
    "GeneratorEstimate", "HeightField", "LatticeShape", "ModelParams",
    "NumericalError", "PdeConfig", "Potential", "RandomSource",
    "RateIndex", "RateOverflowError", "RunArtifact", "ScalingKind",
    "SiteMove", "SpecError", "StabilityError", "StallError",
    "StiffnessError", "TensionSpec", "TensionTable", "Trajectory",
    "WettingReport", "apply_move", "bar_sigma", "build_rate_index",
    "build_tension", "cell_average", "compare", "coordination_number",
    "div_tension", "energy", "evolve", "free_energy_d", "generator_apply",
    "generator_estimate", "gradient", "initial_profile", "interpolate",
    "langevin_run", "lattice_initial", "load_spec", "parse_spec",
    "project", "rhs_rough", "rhs_smooth", "run", "run_experiment",
    "self_similar_iterate", "sigma_c", "sigma_d", "step", "tabulate",
    "tilted_mean_continuous", "tilted_mean_discrete", "total_rate_at",
    "transition_rate", "wetting_report",
]
