import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from fracdd.assemble import (DofPartition, OperatorBlocks, assemble_p1_bulk, assemble_perturbed_operator,
                             assemble_surface_pair, build_dof_partition)
from fracdd.ddprec import (DDPreconditioner, SchurPreconditioner, apply_dd_preconditioner,
                           build_schur_preconditioner, exact_schur_oracle)
from fracdd.linalg import pcg
from fracdd.mesh import build_unit_square_mesh, extract_trace_mesh
from fracdd.spectral import SpectralPower, gevp_factorize


class Problem:
    """2D model problem ``(-Delta + I) + gamma T' L^t T`` with exact spectral pieces."""

    def __init__(self, n, gamma=1.0, t=-0.5, K=1.0):
        mesh = build_unit_square_mesh(n)
        self.trace = extract_trace_mesh(mesh, set(np.unique(mesh.facet_markers).tolist()))
        self.part = build_dof_partition(mesh, self.trace)
        self.L, self.M = assemble_surface_pair(self.trace)
        self.F = gevp_factorize(self.L, self.M)
        self.blocks = assemble_perturbed_operator(assemble_p1_bulk(mesh, K), self.part, gamma,
                                                  SpectralPower(self.F, t), K=K)
        self.terms = [(K, 0.5), (gamma, t)]

    def schur(self, mode="exact", **kw):
        return build_schur_preconditioner(self.L, self.M, self.terms, mode, factorization=self.F, **kw)

    def rhs(self, seed=0):
        return np.random.default_rng(seed).standard_normal(self.part.ndofs)


@pytest.fixture(scope="module")
def p8():
    return Problem(8)


def m_norm(M, x):
    return float(np.sqrt(x @ (M @ x)))


# ---------------------------------------------------------------- Schur preconditioner


def test_schur_mass_term_is_mass_inverse(p8):
    S = build_schur_preconditioner(p8.L, p8.M, [(1.0, 0.0)], "exact", factorization=p8.F)
    b = p8.rhs()[: p8.L.shape[0]]
    assert np.allclose(S.solve(b), np.linalg.solve(p8.M.toarray(), b), rtol=1e-10, atol=1e-12)


def test_schur_zero_weight_term(p8):
    S = build_schur_preconditioner(p8.L, p8.M, [(1.0, 0.5), (0.0, -0.5)], "exact", factorization=p8.F)
    U, lam = p8.F.eigvecs, p8.F.eigvals
    b = p8.rhs(1)[: p8.L.shape[0]]
    assert np.allclose(S.solve(b), U @ ((U.T @ b) / np.sqrt(lam)), rtol=1e-12, atol=1e-14)


def test_schur_exact_vs_rational(p8):
    b = p8.rhs(2)[: p8.L.shape[0]]
    x = p8.schur().solve(b)
    y = p8.schur("rational", eps_ra=1e-14).solve(b)
    assert m_norm(p8.M, x - y) <= 1e-10 * m_norm(p8.M, x)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 16))
def test_schur_symmetric_positive(p8, seed):
    S = p8.schur()
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, p8.L.shape[0]))
    assert S.solve(x) @ y == pytest.approx(x @ S.solve(y), rel=1e-11)
    assert S.solve(x) @ x > 0


def test_schur_bad_terms(p8):
    for terms in ([], [(0.0, 0.5)], [(-1.0, 0.5)], [(1, 0.5), (1, 0.5), (1, 0.5)]):
        with pytest.raises(ValueError):
            build_schur_preconditioner(p8.L, p8.M, terms, "exact", factorization=p8.F)
    with pytest.raises(ValueError):
        build_schur_preconditioner(p8.L, p8.M, [(1.0, 0.5)], "magic")


# ---------------------------------------------------------------- oracle


def test_oracle_two_by_two():
    bulk = sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]])
    part = DofPartition(np.array([0]), np.array([1]), sp.csr_matrix([[0.0, 1.0]]))
    blocks = assemble_perturbed_operator(bulk, part, 0.0)
    assert exact_schur_oracle(blocks)[0, 0] == pytest.approx(1.5, rel=1e-15)


def test_oracle_size_guard(p8):
    with pytest.raises(ValueError):
        exact_schur_oracle(p8.blocks, max_dim=10)


@pytest.mark.parametrize("gamma, t", [(0.0, -0.5), (1.0, -0.5), (1e2, 0.5)])
def test_oracle_spd(gamma, t):
    S = exact_schur_oracle(Problem(8, gamma, t).blocks)
    assert np.abs(S - S.T).max() <= 1e-12 * np.abs(S).max()
    np.linalg.cholesky(S)


def _equivalence_bounds(n, gamma, t):
    p = Problem(n, gamma, t)
    S = exact_schur_oracle(p.blocks)
    from fracdd.spectral import apply_sum

    P = np.column_stack([apply_sum(p.F, p.terms, e) for e in np.eye(S.shape[0])])
    lam = sla.eigh(S, 0.5 * (P + P.T), eigvals_only=True)
    return lam[0], lam[-1]


@pytest.mark.parametrize("gamma, t", [(1.0, -0.5), (1e2, 0.25)])
def test_spectral_equivalence_stable(gamma, t):
    c = [_equivalence_bounds(n, gamma, t) for n in (8, 16)]
    ratios = [hi / lo for lo, hi in c]
    assert ratios[1] == pytest.approx(ratios[0], rel=0.2)


# ---------------------------------------------------------------- DD preconditioner


def test_block_diagonal_case_gives_blockwise_solves():
    p = Problem(4, gamma=0.0)
    bulk = p.blocks.bulk.tolil()
    i0, ii = p.part.interior_idx, p.part.interface_idx
    for i in i0:
        for j in ii:
            bulk[i, j] = bulk[j, i] = 0.0
    blocks = assemble_perturbed_operator(bulk.tocsr(), p.part, 0.0)
    P = DDPreconditioner(blocks, SchurPreconditioner.from_dense(blocks.Aii.toarray()))
    r = p.rhs(3)
    z = apply_dd_preconditioner(P, r)
    r0, ri = p.part.split(r)
    assert np.allclose(z[i0], np.linalg.solve(blocks.A00.toarray(), r0), rtol=1e-12)
    assert np.allclose(z[ii], np.linalg.solve(blocks.Aii.toarray(), ri), rtol=1e-12)


@pytest.mark.parametrize("n, gamma, t", [(4, 1.0, -0.5), (8, 1e2, 0.5), (4, 0.0, 0.25)])
def test_exact_schur_gives_one_iteration(n, gamma, t):
    p = Problem(n, gamma, t)
    P = DDPreconditioner(p.blocks, SchurPreconditioner.from_dense(exact_schur_oracle(p.blocks)))
    x, rep = pcg(p.blocks, P, p.rhs(), rtol=1e-8)
    assert rep.iterations == 1
    assert rep.residual_history[-1] / rep.residual_history[0] <= 1e-8


def test_operation_counts(p8):
    P = DDPreconditioner(p8.blocks, p8.schur())
    P.counts.clear()
    apply_dd_preconditioner(P, p8.rhs())
    assert P.counts["a00"] == 3 and P.counts["schur"] == 1 and P.counts["applications"] == 1


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 16))
def test_dd_preconditioner_symmetric(p8, seed):
    P = DDPreconditioner(p8.blocks, p8.schur())
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, p8.part.ndofs))
    assert P(x) @ y == pytest.approx(x @ P(y), rel=1e-10)


def test_triangular_variant(p8):
    from fracdd.linalg import fgmres

    P = DDPreconditioner(p8.blocks, p8.schur(), variant="triangular")
    P.counts.clear()
    P(p8.rhs())
    assert P.counts["a00"] == 1
    x, rep = fgmres(p8.blocks, P, p8.rhs())
    assert rep.converged


def test_unknown_options(p8):
    with pytest.raises(ValueError):
        DDPreconditioner(p8.blocks, p8.schur(), variant="skew")
    with pytest.raises(ValueError):
        DDPreconditioner(p8.blocks, p8.schur(), a00="lu")


@pytest.mark.parametrize("gamma, t", [(1e-2, -0.5), (1.0, 0.5), (1e4, -0.25)])
def test_rational_matches_exact_iterations(gamma, t):
    p = Problem(8, gamma, t)
    its = []
    for mode in ("exact", "rational"):
        P = DDPreconditioner(p.blocks, p.schur(mode, eps_ra=1e-14) if mode == "rational" else p.schur())
        its.append(pcg(p.blocks, P, p.rhs(), rtol=1e-10)[1].iterations)
    assert abs(its[0] - its[1]) <= 1
