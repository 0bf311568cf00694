"""Fractional powers of SPD operators through the generalized eigenproblem.

For the pencil ``(L_h, M_h)`` with ``L_h U = M_h U Lambda`` and
``U^T M_h U = I``, the matrix ``(M_h U) Lambda^s (M_h U)^T`` realizes ``L^s``
as a map from coefficient vectors to dual vectors, and weighted sums
``sum_i a_i L^{s_i}`` are inverted in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

__all__ = [
    "SpectralFactorization",
    "gevp_factorize",
    "apply_fractional",
    "apply_sum_inverse",
    "apply_sum",
    "fractional_norm",
    "SpectralPower",
    "factorization_count",
]

_COUNT = {"gevp": 0}


def factorization_count() -> int:
    """Number of dense eigen-factorizations built in this process."""
    return _COUNT["gevp"]


@dataclass(frozen=True, eq=False)
class SpectralFactorization:
    eigvals: np.ndarray
    eigvecs: np.ndarray
    MU: np.ndarray

    @property
    def n(self) -> int:
        return len(self.eigvals)


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def gevp_factorize(L_h, M_h) -> SpectralFactorization:
    """Full factorization of the symmetric-definite pencil ``(L_h, M_h)``.

    Dense and cubic in ``dim Q_h``; meant for interfaces up to ~1e4 dofs.
    """
    L = _dense(L_h)
    M = _dense(M_h)
    if L.shape != M.shape or L.shape[0] != L.shape[1]:
        raise ValueError(f"pencil shapes differ: {L.shape} vs {M.shape}")
    try:
        lam, U = sla.eigh(L, M)
    except sla.LinAlgError as err:
        raise ValueError(f"mass matrix is not positive definite: {err}") from err
    MU = M @ U
    resid = np.abs(L @ U - MU * lam).max()
    scale = max(np.abs(L).max(), 1.0)
    if not np.isfinite(resid) or resid > 1e-8 * scale * max(1.0, np.abs(lam).max() / scale):
        raise RuntimeError(f"eigensolver did not converge: residual {resid:.3e}")
    _COUNT["gevp"] += 1
    return SpectralFactorization(lam, U, MU)


def _check_exponent(s: float) -> None:
    if not -1.0 <= s <= 1.0:
        raise ValueError(f"exponent must satisfy |s| <= 1, got {s}")


def apply_fractional(F: SpectralFactorization, s: float, x) -> np.ndarray:
    """Dual vector ``(M U) Lambda^s (M U)^T x``."""
    _check_exponent(s)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != F.n:
        raise ValueError(f"vector of length {x.shape[0]} for factorization of size {F.n}")
    return F.MU @ (F.eigvals[:, None] ** s * (F.MU.T @ x.reshape(F.n, -1))).reshape(x.shape)


def _symbol(F: SpectralFactorization, terms) -> np.ndarray:
    terms = list(terms)
    if not terms:
        raise ValueError("need at least one (weight, exponent) term")
    for a, s in terms:
        if a < 0:
            raise ValueError(f"weights must be non-negative, got {a}")
        _check_exponent(s)
    if all(a == 0 for a, _ in terms):
        raise ValueError("all weights are zero")
    return sum(a * F.eigvals ** s for a, s in terms if a != 0)


def apply_sum(F: SpectralFactorization, terms, x) -> np.ndarray:
    """Forward action of ``sum_i a_i L^{s_i}`` (coefficients to duals)."""
    x = np.asarray(x, dtype=float)
    lam = _symbol(F, terms)
    return F.MU @ (lam.reshape(-1, *([1] * (x.ndim - 1))) * (F.MU.T @ x))


def apply_sum_inverse(F: SpectralFactorization, terms, b) -> np.ndarray:
    """``U diag(sum_i a_i lambda^{s_i})^{-1} U^T b``."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != F.n:
        raise ValueError(f"vector of length {b.shape[0]} for factorization of size {F.n}")
    lam = _symbol(F, terms)
    return F.eigvecs @ ((F.eigvecs.T @ b) / lam.reshape(-1, *([1] * (b.ndim - 1))))


def fractional_norm(F: SpectralFactorization, s: float, x) -> float:
    """``x . L^s x`` (square of the discrete H^s norm)."""
    y = F.MU.T @ np.asarray(x, dtype=float)
    _check_exponent(s)
    return float(np.sum(F.eigvals ** s * y * y))


class SpectralPower:
    """``L^t`` on the trace space as an interface operator handle."""

    def __init__(self, F: SpectralFactorization, t: float):
        _check_exponent(t)
        self.F = F
        self.t = t
        self.dim = F.n

    def apply(self, x):
        return apply_fractional(self.F, self.t, x)

    def dense(self) -> np.ndarray:
        return (self.F.MU * self.F.eigvals ** self.t) @ self.F.MU.T
