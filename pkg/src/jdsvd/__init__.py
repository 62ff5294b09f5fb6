"""Inexact harmonic and refined harmonic Jacobi-Davidson SVD."""

from .driver import ApproxTriplet, SolveResult, SolverConfig, solve
from .sparse import SparseMatrix, load_matrix_market, one_norm

__all__ = [
    "ApproxTriplet",
    "SolveResult",
    "SolverConfig",
    "SparseMatrix",
    "load_matrix_market",
    "one_norm",
    "solve",
]

__version__ = "0.1.0"
