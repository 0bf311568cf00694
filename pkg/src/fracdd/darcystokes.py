"""Coupled Darcy-Stokes problem on two stacked boxes and its block preconditioner.

Unknowns are the Stokes velocity ``u`` (P2), Stokes pressure ``p`` (P1) and
Darcy pressure ``p_D`` (P2).  With ``nu = (0, -1)`` the outward Stokes normal
on the interface, the symmetric system reads

    [[A, B', C'], [B, 0, 0], [C, 0, -D]]

with ``A = mu (grad u, grad v) + alpha mu K^{-1/2} (P u, P v)_Gamma``,
``B = -(div u, q)``, ``C = (u . nu, q_D)_Gamma`` and ``D = K (grad p, grad q)``.
The preconditioner is ``diag(A, mu^{-1} M_p, D + mu^{-1} T' L^{-1/2} T)^{-1}``
where the Darcy block is applied by an inner PCG with the DD preconditioner
and ``S = K L^{1/2} + mu^{-1} L^{-1/2}``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assemble import (apply_dirichlet, assemble_load, assemble_perturbed_operator, assemble_surface_pair,
                       build_dof_partition, dirichlet_dofs, stiffness_and_mass)
from .ddprec import DDPreconditioner, build_schur_preconditioner
from .fem import LagrangeSpace, cell_geometry
from .levels import RestrictedSolver, lagrange_hierarchy, mesh_levels
from .linalg import SolveReport, fgmres, pcg, sparse_cholesky
from .mesh import (DARCY_NOFLUX, DARCY_PRESSURE, INTERFACE, NOSLIP, TRACTION, Mesh, TraceMesh,
                   build_two_domain_mesh)
from .ra import RACache, RationalPower, estimate_spectral_interval
from .spectral import SpectralPower, gevp_factorize
from .stokes import (StokesBlocks, _GAUSS, _line_basis, assemble_stokes_p2p1, boundary_load, error_norms,
                     facet_dofs, interface_mass, velocity_dirichlet_dofs)

__all__ = [
    "DarcyStokesSystem",
    "DSPreconditioner",
    "ManufacturedSolution",
    "assemble_darcy_stokes",
    "build_ds_preconditioner",
    "solve_darcy_stokes",
    "mms_convergence",
    "interface_flux_defect",
]

NU = np.array([0.0, -1.0])


class ManufacturedSolution:
    """Smooth solution used for convergence checks.

    ``u = (sin(pi x) cos(pi y), -cos(pi x) sin(pi y))``, ``p = sin(pi x) cos(pi y)``,
    ``p_D = cos(pi x) exp(y)``; ``u`` is divergence free and the interface
    conditions hold up to explicit residuals that enter the load.
    """

    def __init__(self, mu: float, K: float, alpha: float):
        self.mu, self.K, self.alpha = mu, K, alpha

    @staticmethod
    def u(x, y):
        return np.sin(np.pi * x) * np.cos(np.pi * y), -np.cos(np.pi * x) * np.sin(np.pi * y)

    @staticmethod
    def grad_u(x, y):
        """``((du1/dx, du1/dy), (du2/dx, du2/dy))``."""
        pi = np.pi
        s, c = np.sin(pi * x), np.cos(pi * x)
        sy, cy = np.sin(pi * y), np.cos(pi * y)
        return (pi * c * cy, -pi * s * sy), (pi * s * sy, -pi * c * cy)

    @staticmethod
    def p(x, y):
        return np.sin(np.pi * x) * np.cos(np.pi * y)

    @staticmethod
    def grad_p(x, y):
        pi = np.pi
        return pi * np.cos(pi * x) * np.cos(pi * y), -pi * np.sin(pi * x) * np.sin(pi * y)

    @staticmethod
    def pd(x, y):
        return np.cos(np.pi * x) * np.exp(y)

    @staticmethod
    def grad_pd(x, y):
        return -np.pi * np.sin(np.pi * x) * np.exp(y), np.cos(np.pi * x) * np.exp(y)

    def f_stokes(self, x, y):
        u1, u2 = self.u(x, y)
        gp = self.grad_p(x, y)
        k = 2.0 * self.mu * np.pi ** 2
        return k * u1 + gp[0], k * u2 + gp[1]

    def f_darcy(self, x, y):
        return -self.K * (1.0 - np.pi ** 2) * self.pd(x, y)

    def traction(self, x, y, nx, ny):
        """``sigma n`` with ``sigma = mu grad u - p I``."""
        (a, b), (c, d) = self.grad_u(x, y)
        p = self.p(x, y)
        return (self.mu * (a * nx + b * ny) - p * nx, self.mu * (c * nx + d * ny) - p * ny)

    def interface_residuals(self, x, y):
        """``(r1, r2, r3)`` of the three interface conditions (``r3`` tangential)."""
        nx, ny = NU
        u1, u2 = self.u(x, y)
        gx, gy = self.grad_pd(x, y)
        r1 = u1 * nx + u2 * ny + self.K * (gx * nx + gy * ny)
        tx, ty = self.traction(x, y, nx, ny)
        sn = tx * nx + ty * ny
        r2 = -sn - self.pd(x, y)
        beta = self.alpha * self.mu / np.sqrt(self.K)
        # tangential parts
        px, py = tx - sn * nx, ty - sn * ny
        ut = u1 * nx + u2 * ny
        qx, qy = u1 - ut * nx, u2 - ut * ny
        return r1, r2, (-px - beta * qx, -py - beta * qy)


@dataclass
class DarcyStokesSystem:
    """Assembled coupled system with Dirichlet conditions eliminated.

    Dirichlet rows carry ``+1`` (velocity) or ``-1`` (Darcy pressure) on the
    diagonal so that the matrix stays symmetric.
    """

    n: int
    mu: float
    K: float
    alpha: float
    stokes_mesh: Mesh
    darcy_mesh: Mesh
    trace: TraceMesh
    stokes: StokesBlocks
    VD: LagrangeSpace
    matrix: sp.csr_matrix
    rhs: np.ndarray
    velocity_bc: np.ndarray
    darcy_bc: np.ndarray
    exact: ManufacturedSolution | None = None
    meta: dict = field(default_factory=dict)

    @property
    def sizes(self):
        return self.stokes.nu, self.stokes.Q.dim, self.VD.dim

    @property
    def offsets(self):
        nu, npr, nd = self.sizes
        return np.cumsum([0, nu, npr, nd])

    @property
    def shape(self):
        return self.matrix.shape

    def split(self, x):
        o = self.offsets
        return x[o[0]:o[1]], x[o[1]:o[2]], x[o[2]:o[3]]

    def block(self, i: int, j: int) -> sp.csr_matrix:
        o = self.offsets
        return self.matrix[o[i]:o[i + 1]][:, o[j]:o[j + 1]].tocsr()

    @property
    def darcy_operator(self) -> sp.csr_matrix:
        """``D`` with Dirichlet rows as identity (SPD)."""
        return (-self.block(2, 2)).tocsr()


def _sorted_interface(mesh: Mesh):
    """Interface facets ordered by x, each facet's vertices ordered by x."""
    idx = mesh.facets_with([INTERFACE])
    fac = mesh.facets[idx]
    xs = mesh.vertices[fac][..., 0]
    fac = np.take_along_axis(fac, np.argsort(xs, axis=1), axis=1)
    order = np.argsort(mesh.vertices[fac[:, 0], 0])
    return idx[order], fac[order]


def assemble_darcy_stokes(n: int, mu: float = 1.0, K: float = 1.0, alpha: float = 0.0, data: str = "mms",
                          seed: int = 0) -> DarcyStokesSystem:
    """Assemble the coupled problem on the two-box geometry at resolution ``n``.

    Parameters
    ----------
    data : {"mms", "zero", "random"}
        ``"mms"`` uses :class:`ManufacturedSolution` for loads and boundary
        data, ``"zero"`` homogeneous data, ``"random"`` a seeded random
        right-hand side with homogeneous boundary values.
    """
    if not mu > 0 or not K > 0:
        raise ValueError(f"need mu > 0 and K > 0, got mu={mu}, K={K}")
    if alpha < 0:
        raise ValueError(f"need alpha >= 0, got {alpha}")
    if data not in ("mms", "zero", "random"):
        raise ValueError(f"unknown data {data!r}")
    ms, md, trace = build_two_domain_mesh(n)
    st = assemble_stokes_p2p1(ms, mu, alpha, K, [INTERFACE])
    V, Q = st.V, st.Q
    VD = LagrangeSpace(md, 2)
    SD, _ = stiffness_and_mass(VD)
    D = (K * SD).tocsr()
    sidx, sfac = _sorted_interface(ms)
    didx, dfac = _sorted_interface(md)
    Mi = interface_mass(VD, dfac, V, sfac)
    # u . nu = -u_y
    C = sp.hstack([NU[0] * Mi, NU[1] * Mi], format="csr")
    A = sp.bmat([[st.A, st.B.T, C.T], [st.B, None, None], [C, None, -D]], format="csr")
    nu_, npr, nd = st.nu, Q.dim, VD.dim
    N = nu_ + npr + nd
    b = np.zeros(N)
    vbc = velocity_dirichlet_dofs(V, [NOSLIP])
    dbc = dirichlet_dofs(VD, [DARCY_PRESSURE])
    g = np.zeros(N)
    exact = None
    if data == "mms":
        exact = ManufacturedSolution(mu, K, alpha)
        fs = [assemble_load(V, lambda x, y, k=k: exact.f_stokes(x, y)[k]) for k in range(2)]
        top = ms.facets_with([TRACTION])
        for k in range(2):
            fs[k] = fs[k] + boundary_load(V, top, lambda x, y, nx, ny, k=k: exact.traction(x, y, nx, ny)[k])

            def iface(x, y, nx, ny, k=k):
                _, r2, r3 = exact.interface_residuals(x, y)
                return -r2 * NU[k] - r3[k]

            fs[k] = fs[k] + boundary_load(V, sidx, iface)
        b[:nu_] = np.concatenate(fs)
        side = md.facets_with([DARCY_NOFLUX])
        fd = -assemble_load(VD, exact.f_darcy)
        fd -= boundary_load(VD, side, lambda x, y, nx, ny: K * (exact.grad_pd(x, y)[0] * nx
                                                                + exact.grad_pd(x, y)[1] * ny))
        fd += boundary_load(VD, didx, lambda x, y, nx, ny: exact.interface_residuals(x, y)[0])
        b[nu_ + npr:] = fd
        xv = V.dof_coordinates()
        uex = exact.u(xv[:, 0], xv[:, 1])
        g[:nu_] = np.concatenate(uex)
        xd = VD.dof_coordinates()
        g[nu_ + npr:] = exact.pd(xd[:, 0], xd[:, 1])
    elif data == "random":
        b = np.random.default_rng(seed).standard_normal(N)
    bc = np.concatenate([vbc, nu_ + npr + dbc])
    A, b = apply_dirichlet(A, bc, b, g[bc])
    # Darcy Dirichlet rows: -1 on the diagonal keeps the system symmetric
    sign = np.ones(N)
    sign[nu_ + npr + dbc] = -1.0
    A = (sp.diags(sign) @ A).tocsr()
    b = sign * b
    if data == "random":
        b[bc] = 0.0
    return DarcyStokesSystem(n, mu, K, alpha, ms, md, trace, st, VD, A, b, vbc, dbc, exact,
                             meta={"geometry": "flat interface, (0,1)x(-1,1)", "data": data, "seed": seed})


class DSPreconditioner:
    """Block-diagonal preconditioner with an inner iterative Darcy block.

    Every application appends the inner PCG iteration count to
    ``inner_counts``.
    """

    def __init__(self, velocity, pressure, darcy_op, darcy_prec, sizes, mu: float, inner_rtol: float,
                 inner_maxit: int = 500, direct=None, meta=None):
        self.velocity = velocity
        self.pressure = pressure
        self.darcy_op = darcy_op
        self.darcy_prec = darcy_prec
        self.direct = direct
        self.mu = mu
        self.inner_rtol = inner_rtol
        self.inner_maxit = inner_maxit
        self.sizes = sizes
        self.dim = int(sum(sizes))
        self.inner_counts: list[int] = []
        self.inner_failures = 0
        self.meta = meta or {}

    @property
    def shape(self):
        return (self.dim, self.dim)

    def apply(self, r):
        nu, npr, _ = self.sizes
        ru, rp, rd = r[:nu], r[nu:nu + npr], r[nu + npr:]
        zu = self.velocity.solve(ru)
        zp = self.mu * self.pressure.solve(rp)
        if self.direct is not None:
            zd = self.direct(rd)
            self.inner_counts.append(0)
        else:
            zd, rep = pcg(self.darcy_op, self.darcy_prec, rd, rtol=self.inner_rtol, maxit=self.inner_maxit)
            self.inner_counts.append(rep.iterations)
            self.inner_failures += int(not rep.converged)
        return np.concatenate([zu, zp, zd])

    matvec = apply
    solve = apply
    __call__ = apply


def _velocity_vcycle(sys: DarcyStokesSystem, A):
    V = sys.stokes.V
    free = np.setdiff1d(np.arange(A.shape[0]), sys.velocity_bc)
    meshes = mesh_levels(lambda m: build_two_domain_mesh(m)[0], sys.n, coarsest=1)

    def mask(W):
        out = np.ones(W.dim, dtype=bool)
        out[dirichlet_dofs(W, [NOSLIP])] = False
        return out

    h = lagrange_hierarchy(A[free][:, free].tocsr(), meshes, 2, mask, ncomp=2)
    return RestrictedSolver(A.shape[0], free, h)


def _darcy_a00_vcycle(sys: DarcyStokesSystem, blocks):
    interior = blocks.part.interior_idx
    fixed = np.isin(interior, sys.darcy_bc)
    free = np.flatnonzero(~fixed)
    meshes = mesh_levels(lambda m: build_two_domain_mesh(m)[1], sys.n, coarsest=1)

    def mask(W):
        out = np.ones(W.dim, dtype=bool)
        out[dirichlet_dofs(W, [DARCY_PRESSURE, INTERFACE])] = False
        return out

    A00 = blocks.A00
    h = lagrange_hierarchy(A00[free][:, free].tocsr(), meshes, 2, mask)
    return RestrictedSolver(A00.shape[0], free, h)


def build_ds_preconditioner(sys: DarcyStokesSystem, inner_rtol: float = 1e-5, mode: str = "exact",
                            eps_ra: float = 1e-12, darcy: str = "pcg", velocity: str = "exact", interval=None,
                            ra_cache=None, inner_maxit: int = 500) -> DSPreconditioner:
    """Block preconditioner for :class:`DarcyStokesSystem`.

    Parameters
    ----------
    mode : {"exact", "scalable"}
        Darcy block realization.  ``"exact"`` uses a Cholesky solve for
        ``A00`` and the eigen-factorization for the fractional operators;
        ``"scalable"`` uses a multigrid V-cycle and rational approximations
        (no dense factorization on the interface).
    velocity : {"exact", "vcycle"}
        Cholesky solve or one multigrid V-cycle for the velocity block.
    darcy : {"pcg", "direct"}
        ``"direct"`` replaces the inner PCG by a dense solve (reference).
    ra_cache : RACache, optional
        Fitted approximations shared between calls.
    """
    if not 0.0 < inner_rtol < 1.0:
        raise ValueError(f"inner rtol must lie in (0, 1), got {inner_rtol}")
    if mode not in ("exact", "scalable"):
        raise ValueError(f"unknown mode {mode!r}")
    if velocity not in ("exact", "vcycle"):
        raise ValueError(f"unknown velocity solver {velocity!r}")
    if darcy not in ("pcg", "direct"):
        raise ValueError(f"unknown Darcy solver {darcy!r}")
    t0 = time.perf_counter()
    mu, K = sys.mu, sys.K
    A = sys.block(0, 0)
    Mp = sys.stokes.Mp
    D = sys.darcy_operator
    part = build_dof_partition(sys.darcy_mesh, sys.trace, "P2")
    L, M = assemble_surface_pair(sys.trace, 2)
    terms = [(K, 0.5), (1.0 / mu, -0.5)]
    if mode == "exact":
        F = gevp_factorize(L, M)
        blocks = assemble_perturbed_operator(D, part, 1.0 / mu, SpectralPower(F, -0.5), K=K)
        schur = build_schur_preconditioner(L, M, terms, "exact", factorization=F)
        a00 = "cholesky"
    else:
        cache = ra_cache if ra_cache is not None else RACache()
        interval = tuple(interval or estimate_spectral_interval(L, M))

        def fit(target):
            return cache.get(target, interval, eps_ra)

        op = RationalPower(L, M, -0.5, eps_ra, ra=fit((1.0, 0.5, 0.0, 0.0)))
        blocks = assemble_perturbed_operator(D, part, 1.0 / mu, op, K=K)
        schur = build_schur_preconditioner(L, M, terms, "rational", ra=fit((K, 0.5, 1.0 / mu, -0.5)))
        a00 = _darcy_a00_vcycle(sys, blocks)
    vsolver = sparse_cholesky(A) if velocity == "exact" else _velocity_vcycle(sys, A)
    direct = None
    if darcy == "direct":
        import scipy.linalg as sla

        fac = sla.cho_factor(blocks.dense())
        direct = lambda r: sla.cho_solve(fac, r)  # noqa: E731
    prec = DSPreconditioner(vsolver, sparse_cholesky(Mp), blocks, DDPreconditioner(blocks, schur, a00),
                            sys.sizes, mu, inner_rtol, inner_maxit, direct,
                            meta={"mode": mode, "velocity": velocity, "eps_ra": eps_ra if mode == "scalable" else None,
                                  "interface_dofs": L.shape[0]})
    prec.setup_seconds = time.perf_counter() - t0
    return prec


def solve_darcy_stokes(sys: DarcyStokesSystem, prec: DSPreconditioner, rtol: float = 1e-10, maxit: int = 500):
    """FGMRes from a zero initial guess; ``report.inner_stats`` holds the inner PCG counts."""
    start = len(prec.inner_counts)
    x, rep = fgmres(sys.matrix, prec, sys.rhs, rtol=rtol, maxit=maxit)
    rep.inner_stats = list(prec.inner_counts[start:])
    rep.setup_seconds = getattr(prec, "setup_seconds", 0.0)
    return x, rep


def _facet_cells(mesh: Mesh, fac: np.ndarray) -> np.ndarray:
    """Cell containing each boundary facet."""
    lookup = {}
    for c, cell in enumerate(mesh.cells):
        for a in range(3):
            for b in range(a + 1, 3):
                lookup[(min(cell[a], cell[b]), max(cell[a], cell[b]))] = c
    return np.array([lookup[(min(f), max(f))] for f in fac])


def interface_flux_defect(sys: DarcyStokesSystem, x) -> float:
    """``|int_Gamma (u . nu + K grad p_D . nu)|`` of a discrete state."""
    u, _, pd = sys.split(x)
    V, VD = sys.stokes.V, sys.VD
    _, sfac = _sorted_interface(sys.stokes_mesh)
    _, dfac = _sorted_interface(sys.darcy_mesh)
    g, w = _GAUSS
    s = 0.5 * (g + 1.0)
    phi = _line_basis(2, s)
    xs = sys.stokes_mesh.vertices[sfac]
    length = np.linalg.norm(xs[:, 1] - xs[:, 0], axis=1)
    sd = facet_dofs(V, sfac)
    un = NU[0] * u[:V.dim][sd] + NU[1] * u[V.dim:][sd]
    total = float(np.sum((un @ phi.T) * (0.5 * w)[None, :] * length[:, None]))
    md = sys.darcy_mesh
    cells = _facet_cells(md, dfac)
    x0, jac, _, ginv_t = cell_geometry(md)
    for f, c in zip(dfac, cells):
        a, b = md.vertices[f[0]], md.vertices[f[1]]
        pts = a[None] + s[:, None] * (b - a)[None]
        xi = np.linalg.solve(jac[c], (pts - x0[c]).T).T
        _, rg = VD.tabulate(xi)
        grad = np.einsum("gd,qld,l->qg", ginv_t[c], rg, pd[VD.cell_dofs[c]])
        total += float(np.sum(0.5 * w * np.linalg.norm(b - a) * sys.K * (grad @ NU)))
    return abs(total)


def mms_convergence(ns=(4, 8, 16, 32), mu: float = 1.0, K: float = 1.0, alpha: float = 0.0):
    """Errors of the manufactured solution under refinement, solved directly.

    Returns ``(rows, slopes)``: one dict per ``n`` with the velocity
    H1-seminorm and L2 errors, Stokes pressure L2 error, Darcy pressure H1-seminorm
    and L2 errors, and the interface flux defect; ``slopes`` maps each error to
    its least-squares rate in ``h``.
    """
    rows = []
    for n in ns:
        sys = assemble_darcy_stokes(n, mu, K, alpha, data="mms")
        x = spla.spsolve(sys.matrix.tocsc(), sys.rhs)
        u, p, pd = sys.split(x)
        ex = sys.exact
        V = sys.stokes.V
        l2u, h1u = 0.0, 0.0
        for k in range(2):
            a, b = error_norms(V, u[k * V.dim:(k + 1) * V.dim], lambda x, y, k=k: ex.u(x, y)[k],
                               lambda x, y, k=k: ex.grad_u(x, y)[k])
            l2u += a * a
            h1u += b * b
        l2p, _ = error_norms(sys.stokes.Q, p, ex.p)
        l2d, h1d = error_norms(sys.VD, pd, ex.pd, ex.grad_pd)
        rows.append({"n": n, "h": 1.0 / n, "u_h1": np.sqrt(h1u), "u_l2": np.sqrt(l2u), "p_l2": l2p,
                     "pd_h1": h1d, "pd_l2": l2d, "flux_defect": interface_flux_defect(sys, x)})
    h = np.log([r["h"] for r in rows])
    slopes = {k: float(np.polyfit(h, np.log([r[k] for r in rows]), 1)[0])
              for k in ("u_h1", "u_l2", "p_l2", "pd_h1", "pd_l2")}
    return rows, slopes
