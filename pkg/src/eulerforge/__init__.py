"""Steady Euler states that break the semilinear relation, built and checked numerically."""
from .field_core import Grid2D, ScalarField2D, VectorField2D, LevelComponent

__all__ = ["Grid2D", "ScalarField2D", "VectorField2D", "LevelComponent"]
__version__ = "0.1.0"
