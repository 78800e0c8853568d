"""Variance-reduced estimation of effective diffusion coefficients for
Langevin and quasi-Markovian dynamics on the torus."""

__version__ = "0.1.0"

from .estimators import EstimatorSeries, u_of_T, v_of_T, xi_of_path
from .experiments import ExperimentConfig, fit_scaling, run_sweep
from .gridcv import GridCV, build_grid, compute_d, interpolate, load_cache, save_cache
from .integrators import gle_drift, noise_pair_covariance
from .potentials import available_potentials, make_potential
from .runner import CellResult, run_cell
from .sampling import replica_generator, sample_momenta, sample_positions
from .spectral import (assemble_generator_matrix, diffusion_from_spectral,
                       make_basis, operator_blocks, preset_params,
                       solve_saddle)
from .torus import periodic_distance, wrap_angle
from .underdamped import build_profile, eval_phi0, limiting_diffusion

__all__ = [
    "EstimatorSeries", "ExperimentConfig", "GridCV", "CellResult",
    "assemble_generator_matrix", "available_potentials", "build_grid",
    "build_profile", "compute_d", "diffusion_from_spectral", "eval_phi0",
    "fit_scaling", "gle_drift", "interpolate", "limiting_diffusion",
    "load_cache", "make_basis", "make_potential", "noise_pair_covariance",
    "operator_blocks", "periodic_distance", "preset_params",
    "replica_generator", "run_cell", "run_sweep", "sample_momenta",
    "sample_positions", "save_cache", "solve_saddle", "u_of_T", "v_of_T",
    "wrap_angle", "xi_of_path",
]
