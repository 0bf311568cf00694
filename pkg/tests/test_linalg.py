import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from fracdd.assemble import assemble_p1_bulk, dirichlet_dofs
from fracdd.levels import lagrange_hierarchy, mesh_levels
from fracdd.linalg import (BACKEND, IndefiniteError, NotPositiveDefiniteError, as_operator, build_gmg_hierarchy,
                           fgmres, gmg_vcycle, pcg, sparse_cholesky)
from fracdd.mesh import build_unit_square_mesh

BACKENDS = ["python", "compiled"] if BACKEND == "compiled" else ["python"]


def poisson(n, with_mass=False):
    """P1 Laplacian on the interior dofs of the unit square."""
    mesh = build_unit_square_mesh(n)
    A = assemble_p1_bulk(mesh, 1.0, with_mass=with_mass)
    bnd = np.unique(mesh.facets)
    free = np.setdiff1d(np.arange(A.shape[0]), bnd)
    return A[free][:, free].tocsr()


def poisson_gmg(n, backend=None):
    def mask(V):
        m = np.ones(V.dim, dtype=bool)
        m[dirichlet_dofs(V, set(np.unique(V.mesh.facet_markers).tolist()))] = False
        return m

    A = poisson(n)
    return A, lagrange_hierarchy(A, mesh_levels(build_unit_square_mesh, n), 1, mask)


def random_spd(n, seed):
    rng = np.random.default_rng(seed)
    Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    return Q @ np.diag(rng.uniform(0.5, 10.0, n)) @ Q.T


# ---------------------------------------------------------------- Cholesky


@pytest.mark.parametrize("backend", BACKENDS)
def test_cholesky_identity(backend):
    b = np.arange(5.0)
    assert np.array_equal(sparse_cholesky(sp.identity(5), backend).solve(b), b)


@pytest.mark.parametrize("backend", BACKENDS)
def test_cholesky_two_by_two(backend):
    x = sparse_cholesky(sp.csr_matrix([[4.0, 1.0], [1.0, 3.0]]), backend).solve(np.array([1.0, 2.0]))
    assert x == pytest.approx([1 / 11, 7 / 11], rel=1e-14)


@pytest.mark.parametrize("backend", BACKENDS)
def test_cholesky_stiffness_plus_mass(backend):
    A = assemble_p1_bulk(build_unit_square_mesh(4), 1.0)
    b = np.random.default_rng(0).standard_normal(A.shape[0])
    x = sparse_cholesky(A, backend).solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


@pytest.mark.parametrize("backend", BACKENDS)
def test_cholesky_rejects_indefinite(backend):
    with pytest.raises(NotPositiveDefiniteError):
        sparse_cholesky(sp.csr_matrix([[1.0, 2.0], [2.0, 1.0]]), backend)


@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 30), seed=st.integers(0, 2 ** 16), density=st.floats(0.05, 0.5))
def test_cholesky_random_sparse(n, seed, density):
    rng = np.random.default_rng(seed)
    R = sp.random(n, n, density=density, random_state=rng)
    A = (R @ R.T + n * sp.identity(n)).tocsr()
    b = rng.standard_normal(n)
    xs = [sparse_cholesky(A, be).solve(b) for be in BACKENDS]
    for x in xs:
        assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)
    assert np.allclose(xs[0], xs[-1], rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------- PCG


def test_pcg_exact_preconditioner_one_iteration():
    A = random_spd(20, 1)
    Ainv = np.linalg.inv(A)
    x, rep = pcg(A, lambda r: Ainv @ r, np.ones(20), rtol=1e-10)
    assert rep.iterations == 1 and rep.converged


def test_pcg_finite_termination():
    A = sp.diags(np.repeat([1.0, 5.0, 9.0], 10))
    x, rep = pcg(A, lambda r: r, np.random.default_rng(0).standard_normal(30), rtol=1e-10)
    assert rep.converged and rep.iterations <= 3


def test_pcg_report_invariants():
    A, H = poisson_gmg(16)
    b = np.random.default_rng(1).standard_normal(A.shape[0])
    x, rep = pcg(A, H, b, rtol=1e-10)
    hist = np.array(rep.residual_history)
    assert rep.converged and len(hist) == rep.iterations + 1
    assert hist[-1] / hist[0] <= 1e-10
    assert np.all(np.diff(hist) <= 1e-12 * hist[0])
    assert np.linalg.norm(A @ x - b) <= 1e-8 * np.linalg.norm(b)


def test_pcg_detects_indefinite_operator():
    A = sp.diags([1.0, -1.0, 2.0])
    with pytest.raises(IndefiniteError):
        pcg(A, lambda r: r, np.ones(3))


def test_pcg_maxit_gives_unconverged_report():
    A = poisson(16)
    x, rep = pcg(A, lambda r: r, np.ones(A.shape[0]), rtol=1e-12, maxit=3)
    assert not rep.converged and rep.iterations == 3


def test_pcg_rejects_bad_rtol():
    with pytest.raises(ValueError):
        pcg(sp.identity(2), lambda r: r, np.ones(2), rtol=1.0)


def test_pcg_zero_rhs():
    x, rep = pcg(sp.identity(4), lambda r: r, np.zeros(4))
    assert rep.converged and rep.iterations == 0 and not x.any()


def test_solvers_bit_reproducible():
    A, H = poisson_gmg(8)
    b = np.random.default_rng(2).standard_normal(A.shape[0])
    x1, r1 = pcg(A, H, b)
    x2, r2 = pcg(A, H, b)
    assert np.array_equal(x1, x2) and r1.residual_history == r2.residual_history
    y1, _ = fgmres(A, H, b)
    y2, _ = fgmres(A, H, b)
    assert np.array_equal(y1, y2)


# ---------------------------------------------------------------- FGMRes


@pytest.mark.parametrize("norm", ["preconditioned", "euclidean"])
@pytest.mark.parametrize("scale", [1.0, 0.25, 40.0])
def test_fgmres_identity(norm, scale):
    x, rep = fgmres(sp.identity(6), lambda r: scale * r, np.arange(1.0, 7.0), norm=norm)
    assert rep.converged and rep.iterations == 1
    assert np.allclose(x, np.arange(1.0, 7.0), rtol=1e-12)


@pytest.mark.parametrize("norm", ["preconditioned", "euclidean"])
def test_fgmres_exact_inverse(norm):
    A = random_spd(8, 5)
    Ainv = np.linalg.inv(A)
    x, rep = fgmres(A, lambda r: Ainv @ r, np.ones(8), norm=norm)
    assert rep.converged and rep.iterations == 1


@pytest.mark.parametrize("norm", ["preconditioned", "euclidean"])
def test_fgmres_block_diagonal_exact(norm):
    blocks = [random_spd(k, k) for k in (3, 4, 5)]
    A = sp.block_diag(blocks).toarray()
    scal = [2.0, 3.0, 7.0]  # three clusters of B A
    B = sp.block_diag([np.linalg.inv(Ab) * s for Ab, s in zip(blocks, scal)]).toarray()
    x, rep = fgmres(A, lambda r: B @ r, np.ones(12), rtol=1e-10, norm=norm)
    assert rep.converged and rep.iterations <= 3
    assert np.linalg.norm(A @ x - 1) <= 1e-8 * np.sqrt(12)


def test_fgmres_history_nonincreasing_with_inner_solver():
    A, H = poisson_gmg(16)

    def inexact(r):  # a preconditioner that changes every call
        return pcg(A, H, r, rtol=1e-2)[0]

    b = np.random.default_rng(4).standard_normal(A.shape[0])
    for norm in ("preconditioned", "euclidean"):
        x, rep = fgmres(A, inexact, b, norm=norm)
        hist = np.array(rep.residual_history)
        assert rep.converged and np.all(np.diff(hist) <= 1e-12 * hist[0])
        assert np.linalg.norm(A @ x - b) <= 1e-8 * np.linalg.norm(b)


def test_fgmres_maxit():
    A = poisson(16)
    x, rep = fgmres(A, lambda r: r, np.ones(A.shape[0]), maxit=4)
    assert not rep.converged and rep.iterations == 4


def test_fgmres_zero_rhs():
    x, rep = fgmres(sp.identity(3), lambda r: r, np.zeros(3))
    assert rep.converged and not x.any()


# ---------------------------------------------------------------- multigrid


def test_gmg_single_level_is_exact():
    A = poisson(4)
    H = build_gmg_hierarchy(A, [])
    b = np.random.default_rng(0).standard_normal(A.shape[0])
    assert np.linalg.norm(A @ gmg_vcycle(H, b) - b) <= 1e-12 * np.linalg.norm(b)


def test_gmg_rejects_non_hierarchy():
    with pytest.raises(ValueError):
        gmg_vcycle(object(), np.ones(2))


def test_gmg_prolongation_mismatch():
    with pytest.raises(ValueError):
        build_gmg_hierarchy(poisson(4), [sp.identity(3)])


@pytest.mark.parametrize("backend", BACKENDS)
def test_gmg_contraction_factor(backend):
    A, H = poisson_gmg(32)
    if backend != BACKEND:
        H = build_gmg_hierarchy(A, H.P, backend=backend)
    e = np.random.default_rng(0).standard_normal(A.shape[0])
    energy = lambda v: np.sqrt(v @ (A @ v))
    e0 = energy(e)
    for _ in range(10):
        e = e - H.vcycle(A @ e)
    assert (energy(e) / e0) ** 0.1 <= 0.2


def test_gmg_symmetric():
    A, H = poisson_gmg(16)
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((2, A.shape[0]))
    assert H(x) @ y == pytest.approx(x @ H(y), rel=1e-10)


@pytest.mark.parametrize("n", [8, 16, 32])
def test_gmg_pcg_iterations(n):
    mesh = build_unit_square_mesh(n)
    A = assemble_p1_bulk(mesh, 1.0)
    H = lagrange_hierarchy(A, mesh_levels(build_unit_square_mesh, n), 1, lambda V: np.ones(V.dim, bool))
    x, rep = pcg(A, H, np.random.default_rng(n).standard_normal(A.shape[0]), rtol=1e-10)
    assert rep.converged and rep.iterations <= 25


def test_as_operator_linear():
    A = poisson(8)
    op = as_operator(A)
    rng = np.random.default_rng(2)
    x, y = rng.standard_normal((2, A.shape[0]))
    assert np.linalg.norm(op(x + y) - op(x) - op(y)) <= 1e-12 * np.linalg.norm(op(x + y))
