"""Taylor-Hood P2-P1 Stokes blocks, boundary loads and interface couplings in 2D."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assemble import dirichlet_dofs, export_matrix_market, stiffness_and_mass
from .fem import LagrangeSpace, cell_geometry, csr, simplex_quadrature
from .mesh import Mesh

__all__ = [
    "StokesBlocks",
    "assemble_stokes_p2p1",
    "facet_dofs",
    "facet_normals",
    "boundary_load",
    "interface_mass",
    "error_norms",
    "velocity_dirichlet_dofs",
]

_GAUSS = np.polynomial.legendre.leggauss(5)


def _line_basis(degree: int, s: np.ndarray) -> np.ndarray:
    """1D Lagrange basis on [0, 1]: endpoints first, then the midpoint."""
    if degree == 1:
        return np.stack([1 - s, s], axis=1)
    return np.stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)], axis=1)


def facet_dofs(space: LagrangeSpace, facets: np.ndarray) -> np.ndarray:
    """Dofs on each edge ``(a, b)``: ``a``, ``b`` and (P2) the edge midpoint."""
    out = [facets[:, 0], facets[:, 1]]
    if space.degree == 2:
        out.append(space.mesh.num_vertices + space.edge_index(np.sort(facets, axis=1)))
    return np.stack(out, axis=1)


def facet_normals(mesh: Mesh, facet_idx) -> np.ndarray:
    """Outward unit normals of boundary facets (2D)."""
    fac = mesh.facets[facet_idx]
    x = mesh.vertices
    t = x[fac[:, 1]] - x[fac[:, 0]]
    n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    n /= np.linalg.norm(n, axis=1)[:, None]
    mid = 0.5 * (x[fac[:, 0]] + x[fac[:, 1]])
    centre = np.asarray(mesh.grid.lower) + 0.5 * (np.asarray(mesh.grid.upper) - np.asarray(mesh.grid.lower))
    # boxes are convex: outward means away from the centre
    n[np.einsum("fd,fd->f", n, mid - centre) < 0] *= -1.0
    return n


def _facet_points(mesh: Mesh, fac: np.ndarray):
    g, w = _GAUSS
    s = 0.5 * (g + 1.0)
    x = mesh.vertices
    a, b = x[fac[:, 0]], x[fac[:, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    length = np.linalg.norm(b - a, axis=1)
    return s, pts, 0.5 * w[None, :] * length[:, None]


def boundary_load(space: LagrangeSpace, facet_idx, fn) -> np.ndarray:
    """``int_F fn(x, y, nx, ny) phi_i`` over the selected boundary facets."""
    mesh = space.mesh
    fac = mesh.facets[facet_idx]
    out = np.zeros(space.dim)
    if len(fac) == 0:
        return out
    s, pts, wq = _facet_points(mesh, fac)
    n = facet_normals(mesh, facet_idx)
    vals = np.asarray(fn(pts[..., 0], pts[..., 1], n[:, None, 0], n[:, None, 1]), dtype=float)
    phi = _line_basis(space.degree, s)
    np.add.at(out, facet_dofs(space, fac), np.einsum("fq,qi->fi", vals * wq, phi))
    return out


def interface_mass(space_a: LagrangeSpace, facets_a, space_b: LagrangeSpace, facets_b) -> sp.csr_matrix:
    """``int_Gamma phi^a_i phi^b_j`` for matching facet lists of two meshes."""
    if len(facets_a) != len(facets_b):
        raise ValueError("interface facet lists differ in length")
    xa = space_a.mesh.vertices[facets_a]
    xb = space_b.mesh.vertices[facets_b]
    if not np.array_equal(xa, xb):
        raise ValueError("interface meshes do not match")
    g, w = _GAUSS
    s = 0.5 * (g + 1.0)
    length = np.linalg.norm(xa[:, 1] - xa[:, 0], axis=1)
    pa, pb = _line_basis(space_a.degree, s), _line_basis(space_b.degree, s)
    loc = np.einsum("q,qi,qj->ij", 0.5 * w, pa, pb)
    da, db = facet_dofs(space_a, facets_a), facet_dofs(space_b, facets_b)
    rows = np.repeat(da, db.shape[1], axis=1)
    cols = np.tile(db, (1, da.shape[1]))
    vals = length[:, None, None] * loc[None]
    return csr(rows, cols, vals.reshape(len(length), -1), (space_a.dim, space_b.dim))


@dataclass
class StokesBlocks:
    """Velocity block ``A`` (component-blocked), divergence ``B``, pressure mass ``Mp``."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    Mp: sp.csr_matrix
    V: LagrangeSpace
    Q: LagrangeSpace
    bjs: sp.csr_matrix

    @property
    def nu(self) -> int:
        return self.A.shape[0]


def _divergence(V: LagrangeSpace, Q: LagrangeSpace) -> sp.csr_matrix:
    """``-(div u, q)`` with ``u`` component-blocked."""
    mesh = V.mesh
    xi, w = simplex_quadrature(2, 4)
    _, rg = V.tabulate(xi)
    qv, _ = Q.tabulate(xi)
    _, _, detj, ginv_t = cell_geometry(mesh)
    grads = np.einsum("cgd,qld->cqlg", ginv_t, rg)
    wdet = detj[:, None] * w[None, :]
    blocks = []
    for comp in range(2):
        loc = -np.einsum("cq,qj,cqi->cji", wdet, qv, grads[..., comp])
        rows = np.repeat(Q.cell_dofs, V.num_local, axis=1)
        cols = np.tile(V.cell_dofs, (1, Q.num_local))
        blocks.append(csr(rows, cols, loc.reshape(mesh.num_cells, -1), (Q.dim, V.dim)))
    return sp.hstack(blocks, format="csr")


def assemble_stokes_p2p1(mesh: Mesh, mu: float, alpha: float = 0.0, K: float = 1.0, interface_markers=()) -> StokesBlocks:
    """Blocks of ``mu (grad u, grad v) + alpha mu K^{-1/2} (P u, P v)_Gamma - (p, div v) - (div u, q)``.

    ``P`` is the tangential projection on the facets tagged ``interface_markers``.
    No boundary conditions are imposed here.
    """
    if not mu > 0 or not K > 0:
        raise ValueError(f"need mu > 0 and K > 0, got mu={mu}, K={K}")
    if alpha < 0:
        raise ValueError(f"need alpha >= 0, got {alpha}")
    V = LagrangeSpace(mesh, 2)
    Q = LagrangeSpace(mesh, 1)
    S2, _ = stiffness_and_mass(V)
    _, Mp = stiffness_and_mass(Q)
    A = mu * sp.block_diag([S2, S2], format="csr")
    bjs = sp.csr_matrix(A.shape)
    if alpha > 0 and interface_markers:
        idx = mesh.facets_with(interface_markers)
        fac = mesh.facets[idx]
        n = facet_normals(mesh, idx)
        bjs = sp.csr_matrix(A.shape)
        g, w = _GAUSS
        s = 0.5 * (g + 1.0)
        phi = _line_basis(2, s)
        loc = np.einsum("q,qi,qj->ij", 0.5 * w, phi, phi)
        length = np.linalg.norm(np.diff(mesh.vertices[fac], axis=1)[:, 0], axis=1)
        d = facet_dofs(V, fac)
        for c in range(2):
            for e in range(2):
                proj = float(c == e) - n[:, c] * n[:, e]
                vals = (proj * length)[:, None, None] * loc[None]
                rows = np.repeat(d + c * V.dim, 3, axis=1)
                cols = np.tile(d + e * V.dim, (1, 3))
                bjs = bjs + csr(rows, cols, vals.reshape(len(fac), -1), A.shape)
        bjs = (alpha * mu / np.sqrt(K)) * bjs
        A = (A + bjs).tocsr()
    B = _divergence(V, Q)
    export_matrix_market(A, f"stokes_A_n{A.shape[0]}")
    return StokesBlocks(A, B, Mp, V, Q, bjs.tocsr())


def velocity_dirichlet_dofs(V: LagrangeSpace, markers) -> np.ndarray:
    d = dirichlet_dofs(V, markers)
    return np.concatenate([d, d + V.dim])


def error_norms(space: LagrangeSpace, coef, fn, grad=None, degree: int = 6):
    """``(L2, H1-seminorm)`` errors of a finite-element function against ``fn``.

    ``grad(x, y)`` returns the exact gradient components; the seminorm is
    ``nan`` without it.
    """
    mesh = space.mesh
    xi, w = simplex_quadrature(mesh.dim, degree)
    vals, rg = space.tabulate(xi)
    x0, jac, detj, ginv_t = cell_geometry(mesh)
    pts = x0[:, None, :] + np.einsum("cgd,qd->cqg", jac, xi)
    wdet = detj[:, None] * w[None, :]
    c = np.asarray(coef)[space.cell_dofs]
    uh = np.einsum("ql,cl->cq", vals, c)
    ex = fn(*np.moveaxis(pts, -1, 0))
    l2 = float(np.sqrt(np.sum(wdet * (uh - ex) ** 2)))
    if grad is None:
        return l2, float("nan")
    grads = np.einsum("cgd,qld->cqlg", ginv_t, rg)
    guh = np.einsum("cqlg,cl->cqg", grads, c)
    gex = np.stack(np.broadcast_arrays(*grad(*np.moveaxis(pts, -1, 0))), axis=-1)
    h1 = float(np.sqrt(np.sum(wdet[..., None] * (guh - gex) ** 2)))
    return l2, h1
