"""Lagrange spaces on simplicial meshes, quadrature and point location."""
from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, mesh_entities

__all__ = [
    "simplex_quadrature",
    "LagrangeSpace",
    "P1",
    "P2",
    "cell_geometry",
    "csr",
    "locate_points",
    "interpolation_matrix",
]


@lru_cache(maxsize=None)
def simplex_quadrature(dim: int, degree: int):
    """Collapsed Gauss-Legendre rule on the reference simplex.

    Exact for polynomials of total degree ``degree``.  Weights sum to
    ``1/dim!``.
    """
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    npts = (degree + dim) // 2 + 1
    g, w = np.polynomial.legendre.leggauss(npts)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    pts, wts = [], []
    for idx in itertools.product(range(npts), repeat=dim):
        u = g[list(idx)]
        # x_k = u_k prod_{j<k} (1 - u_j), Jacobian prod_j (1 - u_j)^(dim-1-j)
        x = np.empty(dim)
        scale = 1.0
        for k in range(dim):
            x[k] = scale * u[k]
            scale *= 1.0 - u[k]
        jac = np.prod([(1.0 - u[j]) ** (dim - 1 - j) for j in range(dim)])
        pts.append(x)
        wts.append(np.prod(w[list(idx)]) * jac)
    return np.array(pts), np.array(wts)


def _barycentric(xi: np.ndarray) -> np.ndarray:
    return np.concatenate([1.0 - xi.sum(axis=-1, keepdims=True), xi], axis=-1)


class LagrangeSpace:
    """Continuous scalar Lagrange space of degree 1 or 2.

    Degrees of freedom are vertices first, then (for degree 2) edges in the
    order of :func:`mesh_entities`.  Local numbering on a cell: its vertices,
    then the edges ``(i, j)``, ``i < j``, in lexicographic order.
    """

    def __init__(self, mesh: Mesh, degree: int):
        if degree not in (1, 2):
            raise ValueError(f"unsupported Lagrange degree {degree}")
        self.mesh = mesh
        self.degree = degree
        nv = mesh.num_vertices
        self.local_edges = list(itertools.combinations(range(mesh.dim + 1), 2))
        if degree == 1:
            self.cell_dofs = mesh.cells.copy()
            self.edges = None
            self.dim = nv
        else:
            self.edges = mesh_entities(mesh, 1)
            cell_edges = np.sort(mesh.cells[:, self.local_edges], axis=2)
            self.cell_dofs = np.hstack([mesh.cells, nv + self.edge_index(cell_edges.reshape(-1, 2)).reshape(mesh.num_cells, -1)])
            self.dim = nv + len(self.edges)

    def edge_index(self, pairs: np.ndarray) -> np.ndarray:
        """Position of sorted vertex pairs in ``self.edges``."""
        nv = self.mesh.num_vertices
        keys = self.edges[:, 0] * nv + self.edges[:, 1]
        q = pairs[:, 0] * nv + pairs[:, 1]
        pos = np.searchsorted(keys, q)
        if np.any(pos >= len(keys)) or np.any(keys[np.minimum(pos, len(keys) - 1)] != q):
            raise KeyError("pair is not an edge of the mesh")
        return pos

    @property
    def num_local(self) -> int:
        return self.cell_dofs.shape[1]

    def dof_coordinates(self) -> np.ndarray:
        x = self.mesh.vertices
        if self.degree == 1:
            return x.copy()
        return np.vstack([x, 0.5 * (x[self.edges[:, 0]] + x[self.edges[:, 1]])])

    def tabulate(self, xi: np.ndarray):
        """Reference basis values ``(nq, nloc)`` and gradients ``(nq, nloc, dim)``."""
        lam = _barycentric(np.atleast_2d(xi))
        d = self.mesh.dim
        dlam = np.vstack([-np.ones(d), np.eye(d)])  # (d+1, d)
        if self.degree == 1:
            vals = lam
            grads = np.broadcast_to(dlam, (lam.shape[0],) + dlam.shape).copy()
            return vals, grads
        vals, grads = [], []
        for i in range(d + 1):
            vals.append(lam[:, i] * (2 * lam[:, i] - 1))
            grads.append((4 * lam[:, i] - 1)[:, None] * dlam[i])
        for i, j in self.local_edges:
            vals.append(4 * lam[:, i] * lam[:, j])
            grads.append(4 * (lam[:, j][:, None] * dlam[i] + lam[:, i][:, None] * dlam[j]))
        return np.stack(vals, axis=1), np.stack(grads, axis=1)

    def eval_barycentric(self, lam: np.ndarray) -> np.ndarray:
        return self.tabulate(lam[:, 1:])[0]

    def interpolate(self, fn) -> np.ndarray:
        x = self.dof_coordinates()
        return np.asarray(fn(*x.T), dtype=float) * np.ones(len(x))


def P1(mesh: Mesh) -> LagrangeSpace:
    return LagrangeSpace(mesh, 1)


def P2(mesh: Mesh) -> LagrangeSpace:
    return LagrangeSpace(mesh, 2)


def cell_geometry(mesh: Mesh):
    """Affine maps: origins ``(C, gdim)``, Jacobians ``(C, gdim, dim)``,
    measure factors ``|det J|`` ``(C,)`` and pseudo-inverse transposes
    ``(C, gdim, dim)`` used to push reference gradients forward."""
    x = mesh.vertices[mesh.cells]
    jac = np.swapaxes(x[:, 1:] - x[:, :1], 1, 2)
    gram = np.swapaxes(jac, 1, 2) @ jac
    detg = np.linalg.det(gram)
    invg = np.linalg.inv(gram)
    ginv_t = jac @ invg
    return x[:, 0], jac, np.sqrt(detg), ginv_t


def csr(rows, cols, vals, shape) -> sp.csr_matrix:
    """COO triplets to CSR with summed duplicates and sorted columns."""
    A = sp.coo_matrix((np.ravel(vals), (np.ravel(rows), np.ravel(cols))), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def locate_points(mesh: Mesh, points: np.ndarray):
    """Containing cell and barycentric coordinates of each point.

    Only for structured (Kuhn) meshes: the cube is found from the grid and
    the simplex from the descending order of the local coordinates.
    """
    grid = mesh.grid
    if grid is None:
        raise ValueError("point location needs a structured mesh")
    d = mesh.dim
    counts = np.asarray(grid.counts)
    rel = (points - np.asarray(grid.lower)) / grid.spacing
    cube = np.clip(np.floor(rel).astype(np.int64), 0, counts - 1)
    local = np.clip(rel - cube, 0.0, 1.0)
    order = np.argsort(-local, axis=1, kind="stable")
    perms = {p: k for k, p in enumerate(itertools.permutations(range(d)))}
    perm_id = np.array([perms[tuple(o)] for o in order])
    cube_id = np.ravel_multi_index(tuple(cube.T), tuple(counts))
    cell = cube_id * math.factorial(d) + perm_id
    verts = mesh.vertices[mesh.cells[cell]]
    # solve x = v0 + J lam' for barycentrics
    jac = np.swapaxes(verts[:, 1:] - verts[:, :1], 1, 2)
    lam_t = np.linalg.solve(jac, (points - verts[:, 0])[..., None])[..., 0]
    lam = np.concatenate([1.0 - lam_t.sum(axis=1, keepdims=True), lam_t], axis=1)
    lam[np.abs(lam) < 1e-13] = 0.0
    return cell, lam


def interpolation_matrix(coarse: LagrangeSpace, points: np.ndarray) -> sp.csr_matrix:
    """Matrix evaluating a ``coarse`` finite-element function at ``points``."""
    cell, lam = locate_points(coarse.mesh, points)
    vals = coarse.eval_barycentric(lam)
    vals[np.abs(vals) < 1e-14] = 0.0
    rows = np.repeat(np.arange(len(points)), coarse.num_local)
    A = csr(rows, coarse.cell_dofs[cell].ravel(), vals.ravel(), (len(points), coarse.dim))
    A.eliminate_zeros()
    return A
