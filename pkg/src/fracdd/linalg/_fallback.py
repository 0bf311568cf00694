"""Pure-Python backend: banded LAPACK Cholesky and vectorised Jacobi."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

NAME = "python"


class Factor:
    """Banded Cholesky of a symmetric CSR matrix (ordering done by the caller)."""

    def __init__(self, A):
        coo = A.tocoo()
        low = coo.row >= coo.col
        r, c, v = coo.row[low], coo.col[low], coo.data[low]
        n = A.shape[0]
        bw = int((r - c).max()) if len(r) else 0
        ab = np.zeros((bw + 1, n))
        np.add.at(ab, (r - c, c), v)
        try:
            self.cb = sla.cholesky_banded(ab, lower=True)
        except sla.LinAlgError as err:
            raise ValueError(f"matrix is not positive definite ({err})") from err
        self.n = n
        self.bandwidth = bw

    @property
    def nnz(self) -> int:
        return int(self.cb.size)

    def solve(self, b):
        return sla.cho_solve_banded((self.cb, True), np.asarray(b, dtype=float))


def jacobi(A, dinv, b, x, omega, sweeps):
    for _ in range(sweeps):
        x += omega * dinv * (b - A @ x)
    return x
