"""Numerical laboratory for a semilinear magnetic fractional Calderon problem.

Modules
-------
geometry      lattice, regions, windows and admissible magnetic potentials
kernel        singular kernel, magnetic weight and truncation tails
operator      dense assembly of the operator and discrete norms
nonlinearity  truncated Taylor models of the nonlinearity
solve         linear and semilinear exterior Dirichlet solvers
dtn_inverse   window measurements, Runge controls and coefficient recovery
cli           command-line driver
"""

from .geometry import DomainSpec, MagneticPotential, build_grid, check_admissibility
from .kernel import KernelParams, normalization_constant
from .nonlinearity import TaylorNonlinearity
from .operator import assemble_fractional, assemble_RsA
from .solve import LinearProblem, SolverOptions, solve_linear, solve_nonlinear

__version__ = "0.1.0"

__all__ = [
    "DomainSpec", "MagneticPotential", "build_grid", "check_admissibility",
    "KernelParams", "normalization_constant", "TaylorNonlinearity",
    "assemble_fractional", "assemble_RsA", "LinearProblem", "SolverOptions",
    "solve_linear", "solve_nonlinear",
]
