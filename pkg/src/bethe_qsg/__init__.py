"""Transverse-field ±J Ising spin glass on random regular graphs.

Exact diagonalization, path-integral Monte Carlo, replica Renyi-2 estimation,
classical cavity and mean-field excitation baselines, and the finite-size
analysis that ties them together.
"""

from .graph import DisorderInstance, Region, RegularGraph, generate_rrg, grow_random_region, make_instance
from .exact import HamiltonianSpec, lanczos_ground_state, reduced_density_matrix, renyi_entropy
from .pimc import PimcParams, run_pimc
from .renyi_replica import estimate_renyi2
from .driver import ExperimentConfig, ResultStore, run_experiment

__version__ = "0.1.0"
