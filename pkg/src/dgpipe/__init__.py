"""Staggered discontinuous Galerkin discretization of channel flow.

Modules
-------
grid_basis
    Staggered grids, channel profiles and tensor Lagrange bases.
assembly
    Saddle-point blocks, boundary conditions and the convective term.
structured
    Block symbols, block Toeplitz and block circulant matrices.
symbols
    Closed-form symbols of the discrete operators.
spectral
    Dense spectra compared with sampled symbols.
solvers
    Krylov methods, ILU(0), circulant and LSC preconditioners, Picard steps.
cli
    The ``dgpipe`` command line tool.
"""

from .assembly import SaddleSystem, assemble_saddle_system
from .grid_basis import StaggeredGrid, build_staggered_grid, lagrange_tensor_basis
from .solvers import SaddleSolver, SolverConfig, SolverReport, picard_timestep
from .structured import BlockCirculant, BlockSymbol
from .symbols import PhysicalParams

__version__ = "0.1.0"

__all__ = [
    "SaddleSystem",
    "assemble_saddle_system",
    "StaggeredGrid",
    "build_staggered_grid",
    "lagrange_tensor_basis",
    "SaddleSolver",
    "SolverConfig",
    "SolverReport",
    "picard_timestep",
    "BlockCirculant",
    "BlockSymbol",
    "PhysicalParams",
    "__version__",
]
