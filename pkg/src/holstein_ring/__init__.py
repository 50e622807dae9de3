"""Holstein polaron dynamics on a ring in a constant electric field.

Multi-D2 variational propagation with hierarchical-equations-of-motion and
truncated Fock-space reference solvers.
"""

__version__ = "0.1.0"

from .lattice import ModelParams, PhononGrid, build_phonon_grid, hopping_phase
from .ansatz import MultiD2State, init_two_site, init_gaussian, seed_multiplicity
from .propagator import propagate, rk4_step, Trajectory

__all__ = [
    "ModelParams",
    "PhononGrid",
    "build_phonon_grid",
    "hopping_phase",
    "MultiD2State",
    "init_two_site",
    "init_gaussian",
    "seed_multiplicity",
    "propagate",
    "rk4_step",
    "Trajectory",
]
