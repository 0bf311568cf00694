"""Sparse Cholesky factorization with reverse Cuthill-McKee ordering."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import _backend

__all__ = ["SparseCholesky", "sparse_cholesky", "NotPositiveDefiniteError"]


class NotPositiveDefiniteError(ValueError):
    """Raised on a non-positive pivot."""


class SparseCholesky:
    """``P A P^T = L L^T`` for a symmetric positive definite sparse ``A``.

    Parameters
    ----------
    A : sparse matrix
        Symmetric positive definite; only symmetric storage is assumed.
    backend : {"compiled", "python"}, optional
        Kernel implementation; defaults to the one selected at import.
    """

    def __init__(self, A, backend: str | None = None):
        A = sp.csr_matrix(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.n = A.shape[0]
        self.perm = np.asarray(reverse_cuthill_mckee(A, symmetric_mode=True), dtype=np.int64)
        Ap = A[self.perm][:, self.perm].tocsr()
        Ap.sort_indices()
        self.backend = _backend.get(backend)
        try:
            self._factor = self.backend.Factor(Ap)
        except ValueError as err:
            raise NotPositiveDefiniteError(str(err)) from err

    @property
    def nnz(self) -> int:
        return self._factor.nnz

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"right-hand side of length {b.shape[0]} for matrix of size {self.n}")
        if b.ndim == 2:
            return np.column_stack([self.solve(col) for col in b.T])
        x = np.empty(self.n)
        x[self.perm] = self._factor.solve(b[self.perm])
        return x

    __call__ = solve


def sparse_cholesky(A, backend: str | None = None) -> SparseCholesky:
    """Factor ``A``; the result exposes ``solve(b)``."""
    return SparseCholesky(A, backend)
