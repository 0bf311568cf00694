"""Backend wrapping the compiled kernels."""
from __future__ import annotations

import numpy as np

from . import _kernels

NAME = "compiled"


class Factor:
    """Sparse ``L L^T`` factor of a symmetric CSR matrix (no reordering)."""

    def __init__(self, A):
        n = A.shape[0]
        Ap = np.ascontiguousarray(A.indptr, dtype=np.int64)
        Ai = np.ascontiguousarray(A.indices, dtype=np.int64)
        Ax = np.ascontiguousarray(A.data, dtype=np.float64)
        parent = _kernels.etree(Ap, Ai, n)
        counts = _kernels.column_counts(Ap, Ai, parent, n)
        self.Lp = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.Li, self.Lx = _kernels.cholesky(Ap, Ai, Ax, parent, self.Lp, n)
        self.n = n

    @property
    def nnz(self) -> int:
        return int(self.Lp[-1])

    def solve(self, b):
        x = np.array(b, dtype=np.float64, copy=True)
        _kernels.lsolve(self.Lp, self.Li, self.Lx, x)
        _kernels.ltsolve(self.Lp, self.Li, self.Lx, x)
        return x


def jacobi(A, dinv, b, x, omega, sweeps):
    _kernels.jacobi(
        np.ascontiguousarray(A.indptr, dtype=np.int64),
        np.ascontiguousarray(A.indices, dtype=np.int64),
        np.ascontiguousarray(A.data, dtype=np.float64),
        dinv, np.ascontiguousarray(b, dtype=np.float64), x, float(omega), int(sweeps),
    )
    return x
