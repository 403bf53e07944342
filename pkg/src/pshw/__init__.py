"""pshw: pure-state thermalization and quantum hydrodynamics on small grids."""

from .core import (
    DegenerateAntisymmetrization,
    Grid,
    GridSizeError,
    ManyBodyState,
    PhysicalConstants,
    diagonal_slice,
    make_grid,
    one_body_density,
    symmetrize,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateAntisymmetrization",
    "Grid",
    "GridSizeError",
    "ManyBodyState",
    "PhysicalConstants",
    "diagonal_slice",
    "make_grid",
    "one_body_density",
    "symmetrize",
    "__version__",
]
