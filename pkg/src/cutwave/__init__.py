"""Unfitted discontinuous Galerkin solver for the acoustic wave equation.

The package discretizes the first-order system ``(1/(rho c^2)) u_t - div q = f``,
``rho q_t = grad u`` on a Cartesian quadtree mesh cut by a level-set
interface, and integrates it with a Legendre-coefficient time stepper.
"""
from .assembly import DgSystem, MaterialParams, PenaltyConfig
from .cases import case_traveling_wave, case_two_circles, get_case
from .fem_space import DgSpace
from .geometry import LevelSet, classify_element, interface_deviation, theta_factor
from .mesh import InducedMesh, build_induced_mesh
from .solver import ProblemSpec, RunResult, SolverConfig, energy_error, run
from .time_integrator import SlabState, cfl_limit, closed_form_reference, step_slab

__version__ = "0.1.0"

__all__ = [
    "DgSpace", "DgSystem", "InducedMesh", "LevelSet", "MaterialParams",
    "PenaltyConfig", "ProblemSpec", "RunResult", "SlabState", "SolverConfig",
    "build_induced_mesh", "case_traveling_wave", "case_two_circles",
    "cfl_limit", "classify_element", "closed_form_reference", "energy_error",
    "get_case", "interface_deviation", "run", "step_slab", "theta_factor",
]
