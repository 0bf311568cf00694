"""Lowest-order Brezzi-Douglas-Marini space on triangles and the grad-div operator.

Degrees of freedom are the normal components ``u . n_e`` at the two
endpoints of every edge ``e``.  Edge normals rotate the tangent from the
lower to the higher vertex index clockwise, except on the boundary where they
point outward.  The normal trace of a BDM field is then a discontinuous
piecewise-linear function on the boundary whose nodal values are exactly the
boundary dofs.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .assemble import DofPartition, OperatorBlocks, assemble_perturbed_operator, export_matrix_market
from .fem import LagrangeSpace, csr
from .mesh import Mesh, TraceMesh, extract_trace_mesh, mesh_entities

__all__ = [
    "BDMSpace",
    "assemble_bdm_matrices",
    "bdm_dof_partition",
    "dg_trace_pair",
    "assemble_graddiv_bdm",
    "MassOperator",
]

_LOCAL_EDGES = ((0, 1), (0, 2), (1, 2))


class BDMSpace:
    """BDM1 on a 2D triangle mesh; ``dim = 2 * #edges``."""

    def __init__(self, mesh: Mesh):
        if mesh.dim != 2 or mesh.gdim != 2:
            raise ValueError("BDM elements are implemented for 2D triangle meshes only")
        self.mesh = mesh
        self._lagrange = LagrangeSpace(mesh, 2)  # edge numbering and lookup
        self.edges = self._lagrange.edges
        self.dim = 2 * len(self.edges)
        x = mesh.vertices
        t = x[self.edges[:, 1]] - x[self.edges[:, 0]]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        n /= np.linalg.norm(n, axis=1)[:, None]
        # boundary edges: outward orientation
        bidx = self._lagrange.edge_index(np.sort(mesh.facets, axis=1))
        cell_edges = np.sort(mesh.cells[:, _LOCAL_EDGES], axis=2)
        self.cell_edges = self._lagrange.edge_index(cell_edges.reshape(-1, 2)).reshape(-1, 3)
        opp = np.empty(len(self.edges), dtype=np.int64)
        for k, (i, j) in enumerate(_LOCAL_EDGES):
            opp[self.cell_edges[:, k]] = mesh.cells[:, 3 - i - j]
        inward = np.einsum("ed,ed->e", n[bidx], x[opp[bidx]] - x[self.edges[bidx, 0]]) > 0
        n[bidx[inward]] *= -1.0
        self.normals = n
        self.boundary_edges = bidx
        self._build_local()

    def _build_local(self):
        """Basis coefficients: ``coef[c, 2*i + a, r]`` is component ``a`` of basis ``r`` at vertex ``i``."""
        C = self.mesh.num_cells
        D = np.zeros((C, 6, 6))
        dofs = np.empty((C, 6), dtype=np.int64)
        cells = self.mesh.cells
        for k, (i, j) in enumerate(_LOCAL_EDGES):
            e = self.cell_edges[:, k]
            n = self.normals[e]
            lo_first = cells[:, i] < cells[:, j]
            for slot, lv in enumerate((i, j)):
                # position of local vertex lv within the sorted edge
                pos = np.where(lo_first, slot, 1 - slot)
                row = 2 * k + slot
                D[:, row, 2 * lv : 2 * lv + 2] = n
                dofs[:, row] = 2 * e + pos
        self.coef = np.linalg.inv(D)
        self.cell_dofs = dofs

    def interpolate(self, fn) -> np.ndarray:
        """Dof vector of the field ``fn(x, y) -> (u, v)``."""
        x = self.mesh.vertices
        out = np.empty(self.dim)
        for pos in (0, 1):
            p = x[self.edges[:, pos]]
            u = np.stack(np.broadcast_arrays(*fn(p[:, 0], p[:, 1])), axis=1)
            out[pos::2] = np.einsum("ed,ed->e", u, self.normals)
        return out


def _dlambda(mesh: Mesh):
    x = mesh.vertices[mesh.cells]
    jac = np.swapaxes(x[:, 1:] - x[:, :1], 1, 2)
    inv = np.linalg.inv(jac)  # rows are grad lambda_1, grad lambda_2
    g = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)
    area = 0.5 * np.abs(np.linalg.det(jac))
    return g, area


def assemble_bdm_matrices(V: BDMSpace):
    """Mass ``(u, v)`` and div-div ``(div u, div v)`` matrices."""
    g, area = _dlambda(V.mesh)
    coef = V.coef.reshape(-1, 3, 2, 6)  # (C, vertex, comp, basis)
    div = np.einsum("cid,cidr->cr", g, coef)
    Kdiv = area[:, None, None] * div[:, :, None] * div[:, None, :]
    lam_mass = (np.ones((3, 3)) + np.eye(3)) / 12.0
    Mloc = area[:, None, None] * np.einsum("ij,cidr,cjds->crs", lam_mass, coef, coef)
    dofs = V.cell_dofs
    rows = np.repeat(dofs, 6, axis=1)
    cols = np.tile(dofs, (1, 6))
    shape = (V.dim, V.dim)
    return csr(rows, cols, Mloc.reshape(-1, 36), shape), csr(rows, cols, Kdiv.reshape(-1, 36), shape)


def _trace_dofs(V: BDMSpace, trace: TraceMesh) -> np.ndarray:
    """BDM dof of each DG trace dof ``2 k + j`` (endpoint ``j`` of trace cell ``k``)."""
    pv = trace.parent_vertex[trace.mesh.cells]  # (k, 2) parent vertices
    e = V._lagrange.edge_index(np.sort(pv, axis=1))
    pos = (pv != np.sort(pv, axis=1)[:, :1]).astype(np.int64)  # 0 if lower vertex
    return (2 * e[:, None] + pos).ravel()


def bdm_dof_partition(V: BDMSpace, trace: TraceMesh) -> DofPartition:
    iface = _trace_dofs(V, trace)
    nq = len(iface)
    T = csr(np.arange(nq), iface, np.ones(nq), (nq, V.dim))
    interior = np.setdiff1d(np.arange(V.dim), iface)
    return DofPartition(interior, iface, T)


def dg_trace_pair(trace: TraceMesh, penalty: float = 10.0):
    """``(L_h, M_h)`` for ``-Laplace_Gamma + I`` on discontinuous P1 over a curve.

    ``L_h`` is the symmetric interior-penalty discretization; dofs are the
    cell endpoint values ``2 k + j``.
    """
    tm = trace.mesh
    if tm.dim != 1:
        raise ValueError("DG trace operators are implemented on curves only")
    x = tm.vertices[tm.cells]
    h = np.linalg.norm(x[:, 1] - x[:, 0], axis=1)
    nk = tm.num_cells
    dofs = np.arange(2 * nk).reshape(nk, 2)
    Sloc = np.array([[1.0, -1.0], [-1.0, 1.0]])[None] / h[:, None, None]
    Mloc = np.array([[2.0, 1.0], [1.0, 2.0]])[None] * h[:, None, None] / 6.0
    rows = np.repeat(dofs, 2, axis=1).ravel()
    cols = np.tile(dofs, (1, 2)).ravel()
    M = csr(rows, cols, Mloc.ravel(), (2 * nk, 2 * nk))
    S = csr(rows, cols, Sloc.ravel(), (2 * nk, 2 * nk))
    # interior nodes: vertices shared by two cells
    ri, ci, vi = [], [], []
    for v in range(tm.num_vertices):
        k_, j_ = np.nonzero(tm.cells == v)
        if len(k_) != 2:
            continue
        (k1, k2), (j1, j2) = k_, j_
        idx = [dofs[k1, j1], dofs[k1, 1 - j1], dofs[k2, j2], dofs[k2, 1 - j2]]
        jump = np.array([1.0, 0.0, -1.0, 0.0])
        dn = np.array([1.0 / h[k1], -1.0 / h[k1], -1.0 / h[k2], 1.0 / h[k2]])
        E = -0.5 * (np.outer(dn, jump) + np.outer(jump, dn)) + penalty / (0.5 * (h[k1] + h[k2])) * np.outer(jump, jump)
        ri.append(np.repeat(idx, 4))
        ci.append(np.tile(idx, 4))
        vi.append(E.ravel())
    if ri:
        S = S + csr(np.concatenate(ri), np.concatenate(ci), np.concatenate(vi), S.shape)
    return (S + M).tocsr(), M


class MassOperator:
    """Identity on the trace space realized by its mass matrix."""

    def __init__(self, M):
        self.M = sp.csr_matrix(M)
        self.dim = self.M.shape[0]

    def apply(self, x):
        return self.M @ x

    def dense(self):
        return self.M.toarray()


def assemble_graddiv_bdm(mesh: Mesh, K: float = 1.0, gamma: float = 0.0, trace: TraceMesh | None = None) -> OperatorBlocks:
    """Blocks of ``K (u.v + div u div v) + gamma (u.nu)(v.nu)`` on BDM1.

    ``trace`` defaults to the whole boundary.  The perturbation is the DG
    trace mass matrix.
    """
    if mesh.dim != 2:
        raise ValueError("grad-div BDM assembly is 2D only")
    if not K > 0:
        raise ValueError(f"coefficient K must be positive, got {K}")
    if trace is None:
        trace = extract_trace_mesh(mesh, set(np.unique(mesh.facet_markers).tolist()))
    V = BDMSpace(mesh)
    Mv, Dv = assemble_bdm_matrices(V)
    bulk = (K * (Mv + Dv)).tocsr()
    export_matrix_market(bulk, f"graddiv_bdm_n{V.dim}")
    part = bdm_dof_partition(V, trace)
    _, Mq = dg_trace_pair(trace)
    blocks = assemble_perturbed_operator(bulk, part, gamma, MassOperator(Mq), K=K)
    blocks.space = V
    blocks.trace = trace
    return blocks


def edge_count(mesh: Mesh) -> int:
    return len(mesh_entities(mesh, 1))
