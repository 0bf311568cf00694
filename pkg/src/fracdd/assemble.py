"""Finite-element assembly of bulk, surface and interface-perturbed operators."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import LagrangeSpace, cell_geometry, csr, simplex_quadrature
from .mesh import Mesh, TraceMesh, mesh_entities

__all__ = [
    "stiffness_and_mass",
    "assemble_p1_bulk",
    "assemble_lagrange_bulk",
    "assemble_surface_pair",
    "apply_dirichlet",
    "dirichlet_dofs",
    "DofPartition",
    "build_dof_partition",
    "OperatorBlocks",
    "assemble_perturbed_operator",
    "export_matrix_market",
    "assemble_load",
]


def export_matrix_market(A, name: str, directory=None) -> str | None:
    """Write ``A`` as Matrix Market when a dump directory is configured.

    The directory is ``directory`` or the ``FRACDD_DUMP_DIR`` environment
    variable; nothing is written when neither is set.
    """
    directory = directory or os.environ.get("FRACDD_DUMP_DIR")
    if not directory:
        return None
    import scipy.io

    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"{name}.mtx")
    scipy.io.mmwrite(path, sp.csr_matrix(A))
    return path


def stiffness_and_mass(space: LagrangeSpace):
    """Stiffness ``(grad u, grad v)`` and mass ``(u, v)`` matrices of ``space``.

    Works for bulk and embedded (surface) meshes; quadrature is exact for the
    polynomial integrands.
    """
    mesh = space.mesh
    xi, w = simplex_quadrature(mesh.dim, 2 * space.degree)
    vals, rgrads = space.tabulate(xi)
    _, _, detj, ginv_t = cell_geometry(mesh)
    # physical gradients (C, q, loc, gdim)
    grads = np.einsum("cgd,qld->cqlg", ginv_t, rgrads)
    wdet = detj[:, None] * w[None, :]
    Ke = np.einsum("cq,cqig,cqjg->cij", wdet, grads, grads)
    Me = np.einsum("cq,qi,qj->cij", wdet, vals, vals)
    dofs = space.cell_dofs
    rows = np.repeat(dofs, dofs.shape[1], axis=1)
    cols = np.tile(dofs, (1, dofs.shape[1]))
    shape = (space.dim, space.dim)
    return csr(rows, cols, Ke.reshape(len(dofs), -1), shape), csr(rows, cols, Me.reshape(len(dofs), -1), shape)


def assemble_load(space: LagrangeSpace, fn, degree: int = 6) -> np.ndarray:
    """``(fn, phi_i)`` with ``fn`` evaluated at quadrature points."""
    mesh = space.mesh
    xi, w = simplex_quadrature(mesh.dim, degree)
    vals, _ = space.tabulate(xi)
    x0, jac, detj, _ = cell_geometry(mesh)
    pts = x0[:, None, :] + np.einsum("cgd,qd->cqg", jac, xi)
    f = np.broadcast_to(np.asarray(fn(*np.moveaxis(pts, -1, 0)), dtype=float), pts.shape[:2])
    loc = np.einsum("cq,q,ql->cl", f * detj[:, None], w, vals)
    out = np.zeros(space.dim)
    np.add.at(out, space.cell_dofs, loc)
    return out


def dirichlet_dofs(space: LagrangeSpace, markers) -> np.ndarray:
    """Dofs of ``space`` lying on boundary facets tagged with ``markers``."""
    mesh = space.mesh
    fac = mesh.facets[mesh.facets_with(markers)]
    dofs = [np.unique(fac)]
    if space.degree == 2 and len(fac):
        pairs = []
        for a in range(fac.shape[1]):
            for b in range(a + 1, fac.shape[1]):
                pairs.append(np.sort(fac[:, [a, b]], axis=1))
        dofs.append(mesh.num_vertices + space.edge_index(np.unique(np.vstack(pairs), axis=0)))
    return np.unique(np.concatenate(dofs))


def apply_dirichlet(A, dofs, b=None, values=None):
    """Symmetric elimination of ``dofs`` with unit diagonal.

    Returns the modified matrix, and the lifted right-hand side when ``b`` is
    given (``values`` default to zero).
    """
    A = sp.csr_matrix(A, copy=True)
    n = A.shape[0]
    dofs = np.asarray(dofs, dtype=np.int64)
    if b is not None:
        b = np.array(b, dtype=float, copy=True)
        g = np.zeros(n)
        if values is not None:
            g[dofs] = values
        b -= A @ g
        b[dofs] = g[dofs]
    keep = np.ones(n)
    keep[dofs] = 0.0
    D = sp.diags(keep)
    A = (D @ A @ D).tocsr()
    diag = np.zeros(n)
    diag[dofs] = 1.0
    A = (A + sp.diags(diag)).tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    return A if b is None else (A, b)


def assemble_lagrange_bulk(space: LagrangeSpace, K: float = 1.0, with_mass: bool = True, dirichlet=None):
    """``K * (stiffness + [with_mass] mass)`` with optional Dirichlet elimination."""
    if not K > 0:
        raise ValueError(f"coefficient K must be positive, got {K}")
    S, M = stiffness_and_mass(space)
    A = K * (S + M) if with_mass else K * S
    if dirichlet:
        A = apply_dirichlet(A, dirichlet_dofs(space, dirichlet))
    export_matrix_market(A, f"bulk_p{space.degree}_n{space.dim}")
    return A.tocsr()


def assemble_p1_bulk(mesh: Mesh, K: float = 1.0, with_mass: bool = True, dirichlet=None):
    """P1 matrix of ``K((grad u, grad v) + [with_mass](u, v))``."""
    return assemble_lagrange_bulk(LagrangeSpace(mesh, 1), K, with_mass, dirichlet)


def assemble_surface_pair(trace: TraceMesh, degree: int = 1):
    """``(L_h, M_h)`` for ``L = -Laplace_Gamma + I`` on the trace mesh.

    Natural boundary conditions at the boundary of an open interface.
    """
    space = LagrangeSpace(trace.mesh, degree)
    S, M = stiffness_and_mass(space)
    return (S + M).tocsr(), M


@dataclass
class DofPartition:
    """Split of the dofs of V into interior (V0) and interface (V_Gamma).

    ``interface_idx[j]`` is the bulk dof identified with trace dof ``j``, so
    ``trace_map[:, interface_idx]`` is the identity (up to sign for H(div)).
    """

    interior_idx: np.ndarray
    interface_idx: np.ndarray
    trace_map: sp.csr_matrix
    ndofs: int = field(init=False)

    def __post_init__(self):
        self.ndofs = self.trace_map.shape[1]

    @property
    def perm(self) -> np.ndarray:
        """Bulk dofs ordered interior first, then interface."""
        return np.concatenate([self.interior_idx, self.interface_idx])

    def split(self, x):
        return x[self.interior_idx], x[self.interface_idx]

    def join(self, x0, xi):
        out = np.empty(self.ndofs, dtype=np.result_type(x0, xi))
        out[self.interior_idx] = x0
        out[self.interface_idx] = xi
        return out


def _lagrange_trace_dofs(space: LagrangeSpace, trace: TraceMesh) -> np.ndarray:
    """Bulk dof of each trace-space dof (trace space of the same degree)."""
    if space.degree == 1:
        return trace.parent_vertex.copy()
    tedges = mesh_entities(trace.mesh, 1)
    parent_pairs = np.sort(trace.parent_vertex[tedges], axis=1)
    edge_dofs = space.mesh.num_vertices + space.edge_index(parent_pairs)
    return np.concatenate([trace.parent_vertex, edge_dofs])


def build_dof_partition(mesh: Mesh, trace: TraceMesh, space: str = "P1") -> DofPartition:
    """Interior/interface split and the discrete trace map ``T_h``.

    ``space`` is ``"P1"``, ``"P2"`` (nodal point evaluation) or ``"BDM"``
    (normal components, see :mod:`fracdd.hdiv`).
    """
    if trace.parent is not mesh:
        raise ValueError("trace mesh was not extracted from this mesh")
    if space == "BDM":
        from .hdiv import BDMSpace, bdm_dof_partition

        return bdm_dof_partition(BDMSpace(mesh), trace)
    if space not in ("P1", "P2"):
        raise ValueError(f"unknown space tag {space!r}")
    V = LagrangeSpace(mesh, 1 if space == "P1" else 2)
    iface = _lagrange_trace_dofs(V, trace)
    nq = len(iface)
    T = csr(np.arange(nq), iface, np.ones(nq), (nq, V.dim))
    interior = np.setdiff1d(np.arange(V.dim), iface)
    return DofPartition(interior, iface, T)


@dataclass
class OperatorBlocks:
    """Blocks of ``A = A_Omega + gamma T' L T`` in the interior/interface split.

    ``perturbation`` maps trace coefficients to trace duals (the action of the
    fractional interface operator); ``bulk`` is the unpermuted ``A_Omega``.
    """

    A00: sp.csr_matrix
    A0i: sp.csr_matrix
    Ai0: sp.csr_matrix
    Aii: sp.csr_matrix
    gamma: float
    perturbation: object
    part: DofPartition
    bulk: sp.csr_matrix
    K: float = 1.0

    @property
    def shape(self):
        return self.bulk.shape

    def matvec(self, x):
        """``A_Omega x + gamma T' L^t T x`` without forming the interface block."""
        y = self.bulk @ x
        if self.gamma != 0.0 and self.perturbation is not None:
            T = self.part.trace_map
            y = y + self.gamma * (T.T @ self.perturbation.apply(T @ x))
        return y

    __call__ = matvec

    def perturbation_dense(self) -> np.ndarray:
        """Dense interface block ``gamma * P`` in trace ordering (small problems)."""
        if self.gamma == 0.0 or self.perturbation is None:
            n = len(self.part.interface_idx)
            return np.zeros((n, n))
        dense = getattr(self.perturbation, "dense", None)
        P = dense() if dense is not None else _columns(self.perturbation.apply, len(self.part.interface_idx))
        return self.gamma * P

    def dense(self) -> np.ndarray:
        """Full dense operator in the original dof ordering."""
        A = self.bulk.toarray()
        T = self.part.trace_map.toarray()
        if self.gamma != 0.0 and self.perturbation is not None:
            A = A + T.T @ self.perturbation_dense() @ T
        return A


def _columns(apply, n):
    return np.column_stack([apply(e) for e in np.eye(n)])


def assemble_perturbed_operator(bulk, part: DofPartition, gamma: float, interface_op=None, K: float = 1.0) -> OperatorBlocks:
    """Block structure of the interface-perturbed operator.

    ``interface_op`` provides ``apply(q) -> dual`` on the trace space and a
    ``dim`` attribute (spectral or rational realization of ``L^t``).
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    nq = part.trace_map.shape[0]
    if interface_op is not None and getattr(interface_op, "dim", nq) != nq:
        raise ValueError(f"interface operator has dimension {interface_op.dim}, trace space {nq}")
    if bulk.shape != (part.ndofs, part.ndofs):
        raise ValueError("bulk matrix does not match the dof partition")
    bulk = sp.csr_matrix(bulk)
    i0, ii = part.interior_idx, part.interface_idx
    A00 = bulk[i0][:, i0].tocsr()
    A0i = bulk[i0][:, ii].tocsr()
    Ai0 = bulk[ii][:, i0].tocsr()
    Aii = bulk[ii][:, ii].tocsr()
    return OperatorBlocks(A00, A0i, Ai0, Aii, float(gamma), interface_op, part, bulk, K)


def __getattr__(name):
    # re-exported lazily: these modules import from this one
    if name == "assemble_graddiv_bdm":
        from .hdiv import assemble_graddiv_bdm

        return assemble_graddiv_bdm
    if name == "assemble_stokes_p2p1":
        from .stokes import assemble_stokes_p2p1

        return assemble_stokes_p2p1
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
