"""Interface-direct domain-decomposition preconditioner.

With the dofs split into interior (0) and interface (i) blocks, the
preconditioner is

    B = [[I, -A00^{-1} A0i], [0, I]] diag(A00, S)^{-1} [[I, 0], [-Ai0 A00^{-1}, I]]

where ``S`` is a fractional operator spectrally equivalent to the Schur
complement of the perturbed operator, e.g. ``S = K L^{1/2} + gamma L^t``.
"""
from __future__ import annotations

from collections import Counter

import numpy as np
import scipy.linalg as sla

from .assemble import OperatorBlocks
from .linalg import sparse_cholesky
from .ra import RationalApprox, RationalSolver, estimate_spectral_interval, fit_rational
from .spectral import SpectralFactorization, apply_sum_inverse, gevp_factorize

__all__ = [
    "SchurPreconditioner",
    "build_schur_preconditioner",
    "DDPreconditioner",
    "apply_dd_preconditioner",
    "exact_schur_oracle",
    "ORACLE_MAX_DIM",
]

ORACLE_MAX_DIM = 2000


def _check_terms(terms):
    terms = [(float(a), float(s)) for a, s in terms]
    if not terms or len(terms) > 2:
        raise ValueError("need one or two (weight, exponent) terms")
    if any(a < 0 for a, _ in terms):
        raise ValueError("weights must be non-negative")
    if all(a == 0 for a, _ in terms):
        raise ValueError("all weights are zero")
    return terms


class SchurPreconditioner:
    """Application of ``S^{-1}`` with ``S = sum_i a_i L^{s_i}`` on the trace space.

    Build with :func:`build_schur_preconditioner` or :meth:`from_dense`.
    """

    def __init__(self, terms, mode: str, dim: int, factorization: SpectralFactorization | None = None,
                 solver: RationalSolver | None = None, dense_factor=None):
        self.terms = terms
        self.mode = mode
        self.dim = dim
        self.factorization = factorization
        self.solver = solver
        self._dense = dense_factor
        self.applications = 0

    @classmethod
    def from_dense(cls, S: np.ndarray) -> "SchurPreconditioner":
        """Exact inverse of a given dense SPD matrix (oracle mode)."""
        return cls([], "dense", S.shape[0], dense_factor=sla.cho_factor(S))

    @property
    def ra(self) -> RationalApprox | None:
        return self.solver.ra if self.solver is not None else None

    def solve(self, b):
        self.applications += 1
        if self.mode == "exact":
            return apply_sum_inverse(self.factorization, self.terms, b)
        if self.mode == "rational":
            return self.solver.solve(b)
        return sla.cho_solve(self._dense, b)

    apply = solve
    __call__ = solve


def build_schur_preconditioner(L_h, M_h, terms, mode: str = "exact", eps_ra: float = 1e-14,
                               interval=None, factorization: SpectralFactorization | None = None,
                               ra: RationalApprox | None = None, boundary: str = "natural") -> SchurPreconditioner:
    """``S^{-1}`` for ``S = sum_i a_i L^{s_i}``, at most two terms.

    ``mode="exact"`` uses the eigen-factorization of ``(L_h, M_h)`` (reused
    if ``factorization`` is given); ``mode="rational"`` fits
    ``1 / (a_1 x^{s_1} + a_2 x^{s_2})`` on ``interval`` (estimated when
    omitted) unless a fitted ``ra`` is supplied.  Only natural conditions at
    the boundary of an open interface are implemented.
    """
    terms = _check_terms(terms)
    if boundary != "natural":
        raise ValueError(f"unsupported interface boundary condition {boundary!r}")
    n = L_h.shape[0]
    if mode == "exact":
        F = factorization if factorization is not None else gevp_factorize(L_h, M_h)
        return SchurPreconditioner(terms, mode, n, factorization=F)
    if mode != "rational":
        raise ValueError(f"unknown Schur mode {mode!r}")
    if ra is None:
        (a, s), (b, t) = terms[0], (terms[1] if len(terms) == 2 else (0.0, 0.0))
        interval = interval or estimate_spectral_interval(L_h, M_h)
        ra = fit_rational((a, s, b, t), interval, eps_ra)
    return SchurPreconditioner(terms, mode, n, solver=RationalSolver(ra, L_h, M_h))


class _Cholesky:
    def __init__(self, A):
        self._f = sparse_cholesky(A)

    def solve(self, b):
        return self._f.solve(b)


class DDPreconditioner:
    """Three-factor DD preconditioner for :class:`OperatorBlocks`.

    Parameters
    ----------
    blocks : OperatorBlocks
    schur : SchurPreconditioner or object with ``solve``
    a00 : "cholesky" or object with ``solve``
        Interior solver, e.g. a multigrid hierarchy.
    variant : {"symmetric", "triangular"}
        ``"triangular"`` drops the lower factor (one interior solve per
        call); it is not symmetric and meant for FGMRes.
    """

    def __init__(self, blocks: OperatorBlocks, schur, a00="cholesky", variant: str = "symmetric"):
        if variant not in ("symmetric", "triangular"):
            raise ValueError(f"unknown variant {variant!r}")
        self.blocks = blocks
        self.part = blocks.part
        self.schur = schur
        self.a00 = _Cholesky(blocks.A00) if isinstance(a00, str) and a00 == "cholesky" else a00
        if isinstance(self.a00, str):
            raise ValueError(f"unknown A00 mode {a00!r}")
        self.variant = variant
        self.dim = blocks.shape[0]
        self.counts = Counter()

    @property
    def shape(self):
        return (self.dim, self.dim)

    def _a00(self, b):
        self.counts["a00"] += 1
        return self.a00.solve(b)

    def _schur(self, b):
        self.counts["schur"] += 1
        return self.schur.solve(b)

    def apply(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape[0] != self.dim:
            raise ValueError(f"residual of length {r.shape[0]} for operator of size {self.dim}")
        self.counts["applications"] += 1
        b = self.blocks
        r0, ri = self.part.split(r)
        if self.variant == "symmetric":
            # lower factor
            yi = ri - b.Ai0 @ self._a00(r0)
            # block diagonal
            z0 = self._a00(r0)
            zi = self._schur(yi)
        else:
            zi = self._schur(ri)
            return self.part.join(self._a00(r0 - b.A0i @ zi), zi)
        # upper factor
        x0 = z0 - self._a00(b.A0i @ zi)
        return self.part.join(x0, zi)

    matvec = apply
    solve = apply
    __call__ = apply


def apply_dd_preconditioner(P: DDPreconditioner, r):
    """``z = B r``."""
    return P.apply(r)


def exact_schur_oracle(blocks: OperatorBlocks, max_dim: int = ORACLE_MAX_DIM) -> np.ndarray:
    """Dense ``Aii - Ai0 A00^{-1} A0i + gamma P`` in trace ordering."""
    ni = blocks.Aii.shape[0]
    if ni > max_dim:
        raise ValueError(f"interface dimension {ni} exceeds oracle limit {max_dim}")
    X = sparse_cholesky(blocks.A00).solve(blocks.A0i.toarray()) if blocks.A00.shape[0] else np.zeros((0, ni))
    S = blocks.Aii.toarray() - blocks.Ai0 @ X
    S = S + _trace_order(blocks, blocks.perturbation_dense())
    return 0.5 * (S + S.T)


def _trace_order(blocks: OperatorBlocks, P: np.ndarray) -> np.ndarray:
    """Perturbation block expressed on the interface dofs (handles sign flips)."""
    T = blocks.part.trace_map[:, blocks.part.interface_idx].toarray()
    return T.T @ P @ T
