"""Geometric multigrid V-cycle on nested structured hierarchies."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import _backend
from .cholesky import sparse_cholesky

__all__ = ["GMGHierarchy", "build_gmg_hierarchy", "gmg_vcycle", "lagrange_prolongations"]


def _jacobi_weight(A, dinv, steps: int = 20, seed: int = 0) -> float:
    """``4 / (3 rho)`` with ``rho`` a power-iteration estimate of ``rho(D^{-1} A)``."""
    x = np.random.default_rng(seed).standard_normal(A.shape[0])
    rho = 1.0
    for _ in range(steps):
        y = dinv * (A @ x)
        rho = float(np.linalg.norm(y) / np.linalg.norm(x))
        x = y / np.linalg.norm(y)
    return 4.0 / (3.0 * 1.05 * rho)


class GMGHierarchy:
    """Levels ``0`` (coarsest) to ``L`` (finest) with Galerkin coarse operators.

    Parameters
    ----------
    A : sparse matrix
        Finest-level operator.
    prolongations : list of sparse matrices
        ``P[l]`` maps level ``l`` to level ``l + 1``, coarsest first.
    sweeps : int
        Damped Jacobi sweeps before and after the coarse correction.
    """

    def __init__(self, A, prolongations, sweeps: int = 3, backend: str | None = None):
        A = sp.csr_matrix(A, dtype=float)
        self.P = [sp.csr_matrix(P) for P in prolongations]
        self.sweeps = sweeps
        self.impl = _backend.get(backend)
        ops = [A]
        for P in reversed(self.P):
            if P.shape[0] != ops[0].shape[0]:
                raise ValueError("prolongation does not match the level operator")
            Ac = (P.T @ ops[0] @ P).tocsr()
            Ac.sort_indices()
            ops.insert(0, Ac)
        self.A = ops
        self.dinv = [1.0 / A_l.diagonal() for A_l in ops]
        self.omega = [_jacobi_weight(A_l, d) for A_l, d in zip(ops, self.dinv)]
        self.coarse = sparse_cholesky(ops[0])
        self.applications = 0

    @property
    def depth(self) -> int:
        return len(self.A)

    @property
    def dim(self) -> int:
        return self.A[-1].shape[0]

    @property
    def shape(self):
        return (self.dim, self.dim)

    def _cycle(self, level: int, b):
        if level == 0:
            return self.coarse.solve(b)
        A, dinv, w = self.A[level], self.dinv[level], self.omega[level]
        x = np.zeros_like(b)
        self.impl.jacobi(A, dinv, b, x, w, self.sweeps)
        P = self.P[level - 1]
        x += P @ self._cycle(level - 1, P.T @ (b - A @ x))
        self.impl.jacobi(A, dinv, b, x, w, self.sweeps)
        return x

    def vcycle(self, b):
        """One V-cycle from a zero initial guess."""
        self.applications += 1
        return self._cycle(self.depth - 1, np.asarray(b, dtype=float))

    solve = vcycle
    __call__ = vcycle


def build_gmg_hierarchy(A, prolongations, sweeps: int = 3, backend: str | None = None) -> GMGHierarchy:
    """Hierarchy for ``A``; with no prolongations it degenerates to a direct solve."""
    return GMGHierarchy(A, prolongations, sweeps, backend)


def gmg_vcycle(hierarchy: GMGHierarchy, b):
    """Apply one V-cycle of ``hierarchy`` to ``b``."""
    if not isinstance(hierarchy, GMGHierarchy) or hierarchy.depth < 1:
        raise ValueError("hierarchy needs at least one level")
    return hierarchy.vcycle(b)


def lagrange_prolongations(spaces, free_masks, ncomp: int = 1):
    """Interpolation between nested Lagrange spaces, restricted to free dofs.

    ``spaces`` and ``free_masks`` run from coarsest to finest.  With
    ``ncomp > 1`` the dofs are component-blocked copies of the scalar space.
    """
    from ..fem import interpolation_matrix

    out = []
    for l in range(len(spaces) - 1):
        Vc, Vf = spaces[l], spaces[l + 1]
        P = interpolation_matrix(Vc, Vf.dof_coordinates())
        if ncomp > 1:
            P = sp.kron(sp.identity(ncomp), P, format="csr")
        P = P[np.flatnonzero(free_masks[l + 1])][:, np.flatnonzero(free_masks[l])]
        out.append(P.tocsr())
    return out
