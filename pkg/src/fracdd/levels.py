"""Multigrid hierarchies over nested structured meshes."""
from __future__ import annotations

import numpy as np

from .fem import LagrangeSpace
from .linalg import build_gmg_hierarchy, lagrange_prolongations

__all__ = ["RestrictedSolver", "mesh_levels", "lagrange_hierarchy"]


class RestrictedSolver:
    """Solver acting on the ``free`` dofs; the others carry identity rows."""

    def __init__(self, n: int, free_idx, inner):
        self.dim = n
        self.free = np.asarray(free_idx)
        self.inner = inner

    def solve(self, b):
        x = np.array(b, dtype=float, copy=True)
        x[self.free] = self.inner.solve(b[self.free])
        return x

    __call__ = solve


def mesh_levels(build, n: int, coarsest: int = 2):
    """``[build(m) for m = coarsest, 2 coarsest, ..., n]``; ``n / coarsest`` must be a power of 2."""
    sizes = [n]
    while sizes[0] % 2 == 0 and sizes[0] // 2 >= coarsest:
        sizes.insert(0, sizes[0] // 2)
    return [build(m) for m in sizes]


def lagrange_hierarchy(A, meshes, degree: int, free_mask, ncomp: int = 1, sweeps: int = 3):
    """GMG hierarchy for ``A`` posed on the free dofs of the finest Lagrange space.

    ``free_mask(space)`` returns a boolean mask over the scalar dofs of
    ``space``; the same mask is used for every component.
    """
    spaces = [LagrangeSpace(m, degree) for m in meshes]
    masks = [np.tile(free_mask(V), ncomp) for V in spaces]
    if A.shape[0] != int(masks[-1].sum()):
        raise ValueError("operator size does not match the free dofs of the finest level")
    return build_gmg_hierarchy(A, lagrange_prolongations(spaces, masks, ncomp), sweeps)
