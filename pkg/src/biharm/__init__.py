"""Adaptive C0 interior penalty solver for the clamped biharmonic problem.

Modules
-------
mesh       conforming triangulations with newest-vertex bisection
femspace   the P2 Lagrange space with zero boundary values
c0ipg      assembly, energy norm and linear solvers
estimator  residual error estimator and data oscillation
adapt      marking and the adaptive loop
hct        HCT macro element, smoothing and quasi-interpolation
problems   model problems
cli        command-line driver
"""
from .mesh import Mesh, MeshError, RefinementError, load_mesh, lshape, refine, unit_square
from .femspace import DofMap, FeFunction, interpolate
from .c0ipg import DEFAULT_SIGMA, IndefiniteSystemError, assemble, energy_norm, solve
from .estimator import EstimatorField, estimate, oscillation
from .adapt import MarkingStrategy, adaptive_loop, mark, verify_marking
from .problems import get_problem, registry

__version__ = "0.1.0"
