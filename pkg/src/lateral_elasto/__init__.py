"""Variational axial and lateral displacement estimation for ultrasound
elastography, with an effective-Poisson's-ratio constraint, a
self-supervised consistency pass, a phantom simulator and metrics."""

from .grid import DispField, Field2D, GridSpec, UsFrame, make_grid
from .phantom import Inclusion, PhantomSpec, simulate
from .picture import EprField, compute_epr
from .solver import LossReport, SolverConfig, solve
from .strain import StrainField, compute_strain

__version__ = "0.1.0"

__all__ = [
    "DispField", "EprField", "Field2D", "GridSpec", "Inclusion", "LossReport", "PhantomSpec",
    "SolverConfig", "StrainField", "UsFrame", "compute_epr", "compute_strain", "make_grid",
    "simulate", "solve",
]
