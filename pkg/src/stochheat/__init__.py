"""Numerical laboratory for the stochastic heat equation on [0, 1].

The equation is dY = 1/2 Y'' dt + G(Y) dt + H(Y) W(dt, dx), where the noise W is
white in time and colored in space, and the boundary data can be Dirichlet,
Neumann or mixed, and nonhomogeneous.
"""

from stochheat.core import Field, Grid, SeedSpec, TimeGrid, Trajectory, inner_product, sup_norm
from stochheat.kernels import BoundaryKind, KernelTable, build_kernel_table, apply_semigroup

__version__ = "0.1.0"

__all__ = [
    "BoundaryKind",
    "Field",
    "Grid",
    "KernelTable",
    "SeedSpec",
    "TimeGrid",
    "Trajectory",
    "apply_semigroup",
    "build_kernel_table",
    "inner_product",
    "sup_norm",
]
