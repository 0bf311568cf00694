"""Preconditioned conjugate gradients and flexible GMRES."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

__all__ = ["SolveReport", "IndefiniteError", "as_operator", "pcg", "fgmres"]


class IndefiniteError(ArithmeticError):
    """Raised when PCG meets a non-positive curvature or preconditioner value."""


@dataclass
class SolveReport:
    """Outcome of an iterative solve.

    ``residual_history[0]`` is the initial residual norm; ``inner_stats``
    holds per-application counts of nested solvers.
    """

    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    setup_seconds: float = 0.0
    solve_seconds: float = 0.0
    inner_stats: list = field(default_factory=list)
    true_residual: float = float("nan")
    method: str = ""

    @property
    def reduction(self) -> float:
        h = self.residual_history
        return h[-1] / h[0] if h and h[0] > 0 else 0.0

    @property
    def inner_max(self):
        counts = [s.iterations if isinstance(s, SolveReport) else s for s in self.inner_stats]
        return max(counts) if counts else None

    @property
    def inner_mean(self):
        counts = [s.iterations if isinstance(s, SolveReport) else s for s in self.inner_stats]
        return int(round(float(np.mean(counts)))) if counts else None

    FIELDS = ("method", "iterations", "converged", "reduction", "true_residual",
              "inner_max", "inner_mean", "setup_seconds", "solve_seconds")

    def csv_row(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow(
            ["" if getattr(self, k) is None else getattr(self, k) for k in self.FIELDS])
        return buf.getvalue()

    def write_history(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,residual\n")
            for k, r in enumerate(self.residual_history):
                fh.write(f"{k},{r!r}\n")


def as_operator(A, n: int | None = None) -> LinearOperator:
    """Wrap a matrix, ``LinearOperator``, callable or object with ``matvec``/``solve``."""
    if isinstance(A, LinearOperator):
        return A
    if sp.issparse(A) or isinstance(A, np.ndarray):
        return aslinearoperator(A)
    for name in ("matvec", "apply", "solve"):
        fn = getattr(A, name, None)
        if callable(fn):
            break
    else:
        if not callable(A):
            raise TypeError(f"cannot use {type(A).__name__} as a linear operator")
        fn = A
    n = n or getattr(A, "dim", None) or A.shape[0]
    return LinearOperator((n, n), matvec=fn, dtype=float)


def pcg(A, B, b, rtol: float = 1e-10, maxit: int = 500) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned CG from ``x0 = 0``.

    Stops once ``sqrt(r . B r)`` has dropped by ``rtol`` relative to its
    initial value.  ``B`` may be ``None`` (identity).
    """
    if not 0.0 < rtol < 1.0:
        raise ValueError(f"rtol must lie in (0, 1), got {rtol}")
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    A = as_operator(A, n)
    B = as_operator(B, n) if B is not None else aslinearoperator(sp.identity(n))
    rep = SolveReport(method="pcg")
    x = np.zeros(n)
    r = b.copy()
    z = B.matvec(r)
    rz = float(r @ z)
    if rz < 0:
        raise IndefiniteError(f"preconditioner is not positive: r.Br = {rz:.3e}")
    r0 = math.sqrt(rz)
    rep.residual_history.append(r0)
    if r0 == 0.0:
        rep.converged = True
    p = z.copy()
    while not rep.converged and rep.iterations < maxit:
        Ap = A.matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise IndefiniteError(f"operator is not positive: p.Ap = {pAp:.3e}")
        a = rz / pAp
        x += a * p
        r -= a * Ap
        z = B.matvec(r)
        rz_new = float(r @ z)
        if rz_new < 0:
            raise IndefiniteError(f"preconditioner is not positive: r.Br = {rz_new:.3e}")
        rep.iterations += 1
        rn = math.sqrt(rz_new)
        rep.residual_history.append(rn)
        if rn <= rtol * r0:
            rep.converged = True
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    bn = np.linalg.norm(b)
    rep.true_residual = float(np.linalg.norm(b - A.matvec(x)) / bn) if bn else 0.0
    rep.solve_seconds = time.perf_counter() - t0
    return x, rep


def fgmres(A, B, b, rtol: float = 1e-10, maxit: int = 500,
           norm: str = "preconditioned") -> tuple[np.ndarray, SolveReport]:
    """Unrestarted flexible GMRES with right preconditioner ``B`` from ``x0 = 0``.

    ``B`` may change between applications (inner iterative solves).

    Parameters
    ----------
    norm : {"preconditioned", "euclidean"}
        Residual norm that is minimized and monitored.  ``"preconditioned"``
        uses ``sqrt(r . B r)``: the Arnoldi basis is orthonormalized in the
        inner product ``<u, v> = u . B v``, which is the natural one when
        ``B`` is a symmetric positive definite Riesz-map preconditioner for a
        symmetric indefinite ``A``.  It needs ``B`` positive on the basis.
    """
    if not 0.0 < rtol < 1.0:
        raise ValueError(f"rtol must lie in (0, 1), got {rtol}")
    if norm not in ("preconditioned", "euclidean"):
        raise ValueError(f"unknown norm {norm!r}")
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    A = as_operator(A, n)
    B = as_operator(B, n) if B is not None else aslinearoperator(sp.identity(n))
    rep = SolveReport(method="fgmres")
    weighted = norm == "preconditioned"
    x = np.zeros(n)
    if not np.any(b):
        rep.residual_history.append(0.0)
        rep.converged = True
        rep.true_residual = 0.0
        return x, rep
    if weighted:
        zb = B.matvec(b)
        beta2 = float(b @ zb)
        if not beta2 > 0:
            raise IndefiniteError("preconditioner is not positive on the right-hand side")
        beta = math.sqrt(beta2)
        Z = [zb / beta]
    else:
        beta = float(np.linalg.norm(b))
        Z = []
    rep.residual_history.append(beta)
    V = [b / beta]
    H = np.zeros((maxit + 1, maxit))
    cs, sn = np.zeros(maxit), np.zeros(maxit)
    g = np.zeros(maxit + 1)
    g[0] = beta
    for k in range(maxit):
        if not weighted:
            Z.append(B.matvec(V[k]))
        w = A.matvec(Z[k])
        if weighted:
            # classical Gram-Schmidt twice in the B inner product
            Zk = np.array(Z)
            Vk = np.array(V)
            h = Zk @ w
            w = w - h @ Vk
            h2 = Zk @ w
            w = w - h2 @ Vk
            H[:k + 1, k] = h + h2
            bw = B.matvec(w)
            hn2 = float(w @ bw)
            if hn2 < 0:
                raise IndefiniteError("preconditioner is not positive definite")
            hnext = math.sqrt(hn2)
        else:
            for i in range(k + 1):  # modified Gram-Schmidt
                H[i, k] = w @ V[i]
                w = w - H[i, k] * V[i]
            hnext = float(np.linalg.norm(w))
        H[k + 1, k] = hnext
        for i in range(k):
            hi = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
            H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
            H[i, k] = hi
        den = math.hypot(H[k, k], H[k + 1, k])
        cs[k], sn[k] = H[k, k] / den, H[k + 1, k] / den
        breakdown = H[k + 1, k] <= 1e-14 * den
        H[k, k] = den
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        res = abs(g[k + 1])
        rep.iterations = k + 1
        rep.residual_history.append(res)
        if res <= rtol * beta or breakdown:
            rep.converged = True
            break
        V.append(w / hnext)
        if weighted:
            Z.append(bw / hnext)
    m = rep.iterations
    y = np.linalg.solve(np.triu(H[:m, :m]), g[:m])
    for i in range(m):
        x += y[i] * Z[i]
    rep.true_residual = float(np.linalg.norm(b - A.matvec(x)) / np.linalg.norm(b))
    rep.solve_seconds = time.perf_counter() - t0
    return x, rep
