"""Pseudo-spectral solver and diagnostics for incompressible flow coupled to a
functionalized Cahn-Hilliard phase field on a periodic box."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.1.0"

from .model import CoefficientLaw, ModelParams, PhaseState, Potential
from .solver import Scheme, SolverConfig, run, step
from .spectral import Field, Grid, VectorField

__all__ = [
    "CoefficientLaw", "Field", "Grid", "ModelParams", "PhaseState", "Potential",
    "Scheme", "SolverConfig", "VectorField", "run", "step",
]
