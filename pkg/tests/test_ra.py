import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from fracdd.assemble import assemble_surface_pair
from fracdd.mesh import build_unit_square_mesh, extract_trace_mesh
from fracdd.ra import (RACache, RAFitError, RationalApprox, RationalPower, RationalSolver, apply_ra,
                       estimate_spectral_interval, fit_rational, target_function, verify_ra)
from fracdd.spectral import apply_fractional, apply_sum_inverse, gevp_factorize


def boundary_pair(n):
    mesh = build_unit_square_mesh(n)
    tr = extract_trace_mesh(mesh, set(np.unique(mesh.facet_markers).tolist()))
    return assemble_surface_pair(tr)


def m_norm(M, x):
    return float(np.sqrt(x @ (M @ x)))


@pytest.fixture(scope="module")
def square8():
    L, M = boundary_pair(8)
    return L, M, gevp_factorize(L, M), tuple(estimate_spectral_interval(L, M))


@pytest.fixture(scope="module")
def schur_fit(square8):
    *_, interval = square8
    return fit_rational((1.0, 0.5, 0.1, -0.5), interval, 1e-14)


# ---------------------------------------------------------------- interval


def test_interval_identical_pair():
    _, M = boundary_pair(4)
    lo, hi = estimate_spectral_interval(M, M)
    assert lo == 1.0 and hi == pytest.approx(1.1, rel=1e-3)


def test_interval_encloses_and_scales():
    his = []
    for n in (8, 16):
        L, M = boundary_pair(n)
        lam = sla.eigh(L.toarray(), M.toarray(), eigvals_only=True)
        lo, hi = estimate_spectral_interval(L, M)
        assert lo <= lam[0] + 1e-10 and hi >= lam[-1]
        his.append(hi)
    assert his[1] / his[0] == pytest.approx(4.0, rel=0.1)


# ---------------------------------------------------------------- fit


def test_constant_target_is_exact():
    ra = fit_rational((1.0, 0.0, 0.0, 0.3), (1.0, 1e6), 1e-14)
    assert ra.m == 0 and ra.c0 == 1.0
    assert verify_ra(ra) == 0.0


def test_inverse_square_root_values():
    ra = fit_rational((0.0, 0.9, 1.0, 0.5), (1.0, 1e4), 1e-12)
    assert ra(np.array([1.0, 4.0, 100.0])) == pytest.approx([1.0, 0.5, 0.1], rel=1e-11)
    assert ra.achieved <= 1e-12


@pytest.mark.parametrize("target, interval, eps", [
    ((1.0, 0.5, 1.0, -0.5), (1.0, 1e4), 1e-12),
    ((1.0, 0.5, 1e-2, 0.25), (1.0, 5e3), 1e-10),
    ((2.0, -0.5, 0.5, 0.0), (1.0, 1e3), 1e-12),
])
def test_fit_invariants(target, interval, eps):
    ra = fit_rational(target, interval, eps)
    assert np.all(ra.poles >= 0)
    assert verify_ra(ra) <= eps
    assert ra.achieved == verify_ra(ra)


def test_fit_is_deterministic():
    a = fit_rational((1.0, 0.5, 1.0, -0.5), (1.0, 1e3), 1e-10)
    b = fit_rational((1.0, 0.5, 1.0, -0.5), (1.0, 1e3), 1e-10)
    assert np.array_equal(a.poles, b.poles) and np.array_equal(a.residues, b.residues)


def test_truncated_fit_fails_verification():
    ra = fit_rational((1.0, 0.5, 1.0, -0.5), (1.0, 1e4), 1e-12)
    cut = RationalApprox(ra.c0, ra.residues[:-1], ra.poles[:-1], ra.eps_ra, ra.interval, ra.target)
    assert verify_ra(cut) > ra.eps_ra


@pytest.mark.parametrize("target, interval, eps", [
    ((-1.0, 0.5, 1.0, 0.0), (1, 10), 1e-8),
    ((0.0, 0.5, 0.0, 0.5), (1, 10), 1e-8),
    ((1.0, 1.5, 0.0, 0.0), (1, 10), 1e-8),
    ((1.0, 0.5, 0.0, 0.0), (0, 10), 1e-8),
    ((1.0, 0.5, 0.0, 0.0), (1, 10), 1e-16),
])
def test_fit_rejects_bad_input(target, interval, eps):
    with pytest.raises(ValueError):
        fit_rational(target, interval, eps)


def test_fit_failure_carries_achieved_error():
    with pytest.raises(RAFitError) as info:
        fit_rational((1.0, 0.5, 1.0, -0.5), (1.0, 1e6), 1e-15, max_degree=10)
    assert info.value.achieved > 1e-15 and info.value.degree <= 10


def test_pole_count_independent_of_dimension():
    ms = []
    for n in (8, 16):
        L, M = boundary_pair(n)
        ms.append(fit_rational((1.0, 0.5, 1.0, -0.5), estimate_spectral_interval(L, M), 1e-12).m)
    assert abs(ms[0] - ms[1]) <= 5


def test_text_round_trip(schur_fit):
    back = RationalApprox.from_text(schur_fit.to_text())
    assert np.array_equal(back.poles, schur_fit.poles)
    assert np.array_equal(back.residues, schur_fit.residues)
    assert back.c0 == schur_fit.c0 and back.target == schur_fit.target
    assert tuple(back.interval) == tuple(schur_fit.interval)


def test_cache_persists(tmp_path):
    cache = RACache(tmp_path)
    args = ((1.0, 0.5, 0.0, 0.0), (1.0, 100.0), 1e-8)
    first = cache.get(*args)
    assert cache.misses == 1 and len(list(tmp_path.iterdir())) == 1
    fresh = RACache(tmp_path)
    again = fresh.get(*args)
    assert fresh.hits == 1 and fresh.misses == 0
    assert np.array_equal(again.poles, first.poles)


# ---------------------------------------------------------------- application


def test_apply_constant_is_mass_inverse(square8):
    L, M, _, interval = square8
    ra = RationalApprox(1.0, np.array([]), np.array([]), 1e-14, interval, (1.0, 0.0, 0.0, 0.0))
    b = np.random.default_rng(0).standard_normal(L.shape[0])
    assert np.allclose(apply_ra(ra, L, M, b), np.linalg.solve(M.toarray(), b), rtol=1e-12, atol=1e-12)


def test_apply_matches_spectral(square8, schur_fit):
    L, M, F, _ = square8
    b = np.random.default_rng(1).standard_normal(L.shape[0])
    x = apply_sum_inverse(F, [(1.0, 0.5), (0.1, -0.5)], b)
    y = apply_ra(schur_fit, L, M, b)
    assert m_norm(M, x - y) <= 10 * schur_fit.eps_ra * m_norm(M, x)


def test_apply_on_eigenvector(square8, schur_fit):
    L, M, F, _ = square8
    k = len(F.eigvals) // 2
    v, lam = F.eigvecs[:, k], F.eigvals[k]
    f = target_function(schur_fit.target, np.array([lam]))[0]
    x = apply_ra(schur_fit, L, M, M @ v)
    assert np.linalg.norm(x - f * v) <= 10 * schur_fit.eps_ra * np.linalg.norm(f * v)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 16))
def test_solver_linear_and_symmetric(square8, schur_fit, seed):
    L, M, *_ = square8
    S = RationalSolver(schur_fit, L, M)
    rng = np.random.default_rng(seed)
    b1, b2 = rng.standard_normal((2, L.shape[0]))
    x12 = S.solve(b1 + b2)
    assert np.linalg.norm(x12 - S.solve(b1) - S.solve(b2)) <= 1e-12 * np.linalg.norm(x12)
    lhs, rhs = S.solve(b1) @ b2, b1 @ S.solve(b2)
    assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(S.solve(b1)) * np.linalg.norm(b2)


@pytest.mark.parametrize("t", [-0.5, 0.5])
def test_rational_power_matches_spectral(square8, t):
    L, M, F, interval = square8
    P = RationalPower(L, M, t, 1e-12, interval=interval)
    x = np.random.default_rng(3).standard_normal(L.shape[0])
    ref = apply_fractional(F, t, x)
    assert np.linalg.norm(P.apply(x) - ref) <= 1e-9 * np.linalg.norm(ref)
