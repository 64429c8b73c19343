"""Sparse nonnegative Tucker decomposition by alternating proximal gradient."""

from .model import Problem, Regularization, TuckerModel, relative_error
from .solver import SolverOptions, init_hosvd, solve, solve_apg1, solve_apg2

__all__ = [
    "Problem",
    "Regularization",
    "SolverOptions",
    "TuckerModel",
    "init_hosvd",
    "relative_error",
    "solve",
    "solve_apg1",
    "solve_apg2",
]
