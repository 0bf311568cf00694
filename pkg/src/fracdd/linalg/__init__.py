"""Sparse direct and iterative solvers."""
from ._backend import BACKEND
from .cholesky import NotPositiveDefiniteError, SparseCholesky, sparse_cholesky
from .krylov import IndefiniteError, SolveReport, as_operator, fgmres, pcg
from .multigrid import GMGHierarchy, build_gmg_hierarchy, gmg_vcycle, lagrange_prolongations

__all__ = [
    "BACKEND",
    "SparseCholesky",
    "sparse_cholesky",
    "NotPositiveDefiniteError",
    "SolveReport",
    "IndefiniteError",
    "as_operator",
    "pcg",
    "fgmres",
    "GMGHierarchy",
    "build_gmg_hierarchy",
    "gmg_vcycle",
    "lagrange_prolongations",
]
