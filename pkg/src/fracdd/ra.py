"""Rational approximation of ``f(x) = 1 / (alpha x^s + beta x^t)``.

The fit has partial-fraction form

    f(x) ~ c0 + sum_k c_k / (x + p_k),    p_k > 0,

so that ``f(L_h)`` acting on a dual vector is
``c0 M^{-1} b + sum_k c_k (L_h + p_k M_h)^{-1} b``.

Poles are initialised by AAA run in the Moebius variable
``y = (x - sigma) / (x + sigma)``, ``sigma = sqrt(lo hi)``, which maps the
interval to a compact set on which AAA is well conditioned.  They are then
refined by variable projection (Levenberg-Marquardt on log-poles, residues
eliminated by linear least squares) with Lawson reweighting towards the
minimax error.  Residuals are evaluated in extended precision since the
target accuracy sits close to double-precision round-off.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

__all__ = [
    "RationalApprox",
    "RAFitError",
    "estimate_spectral_interval",
    "fit_rational",
    "verify_ra",
    "apply_ra",
    "RationalSolver",
    "RationalPower",
    "target_function",
    "RACache",
]

LD = np.longdouble
MAX_DEGREE = 60
_VERIFY_POINTS = 10_000
_AAA_POINTS = 3000
_FIT_POINTS = 600


class RAFitError(RuntimeError):
    """Raised when the requested accuracy is not reached; carries the best error."""

    def __init__(self, message: str, achieved: float, degree: int, best=None):
        super().__init__(message)
        self.achieved = achieved
        self.degree = degree
        self.best = best


def target_function(target, x):
    """``1 / (alpha x^s + beta x^t)`` evaluated in the dtype of ``x``."""
    a, s, b, t = target
    x = np.asarray(x)
    one = x.dtype.type(1) if x.dtype.kind == "f" else 1.0
    den = 0 * x
    if a:
        den = den + x.dtype.type(a) * x ** x.dtype.type(s) if x.dtype.kind == "f" else den + a * x ** s
    if b:
        den = den + x.dtype.type(b) * x ** x.dtype.type(t) if x.dtype.kind == "f" else den + b * x ** t
    return one / den


@dataclass
class RationalApprox:
    """Pole-residue representation of a rational fit on ``interval``."""

    c0: float
    residues: np.ndarray
    poles: np.ndarray
    eps_ra: float
    interval: tuple
    target: tuple
    achieved: float = field(default=float("nan"))

    def __post_init__(self):
        self.residues = np.asarray(self.residues, dtype=float)
        self.poles = np.asarray(self.poles, dtype=float)
        self.interval = tuple(float(v) for v in self.interval)
        self.target = tuple(float(v) for v in self.target)
        if self.residues.shape != self.poles.shape:
            raise ValueError("residues and poles differ in length")
        if np.any(self.poles < 0):
            raise ValueError("poles must be non-negative")

    @property
    def m(self) -> int:
        return len(self.poles)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.c0 + (self.residues / (x[..., None] + self.poles)).sum(axis=-1)

    def truncated(self, m: int) -> "RationalApprox":
        """Copy keeping only the first ``m`` poles (for perturbation checks)."""
        return RationalApprox(self.c0, self.residues[:m], self.poles[:m], self.eps_ra, self.interval, self.target)

    def to_text(self) -> str:
        lines = [
            "# fracdd rational approximation",
            "target " + " ".join(repr(v) for v in self.target),
            "interval " + " ".join(repr(v) for v in self.interval),
            f"eps_ra {self.eps_ra!r}",
            f"achieved {self.achieved!r}",
            f"c0 {float(self.c0)!r}",
            f"m {self.m}",
        ]
        lines += [f"{p!r} {c!r}" for p, c in zip(self.poles.tolist(), self.residues.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RationalApprox":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        head = {r[0]: r[1:] for r in rows[:6]}
        m = int(head["m"][0])
        pc = np.array([[float(v) for v in r] for r in rows[6 : 6 + m]]).reshape(m, 2)
        return cls(
            float(head["c0"][0]),
            pc[:, 1],
            pc[:, 0],
            float(head["eps_ra"][0]),
            tuple(float(v) for v in head["interval"]),
            tuple(float(v) for v in head["target"]),
            float(head["achieved"][0]),
        )


# ---------------------------------------------------------------- interval


def estimate_spectral_interval(L_h, M_h, lam_min: float = 1.0, steps: int = 30, inflate: float = 1.1,
                               maxsteps: int = 2000, rtol: float = 1e-4, seed: int = 0):
    """Interval ``[lam_min, lam_max]`` enclosing the spectrum of ``M^{-1} L``.

    ``lam_max`` comes from power iteration (at least ``steps`` steps, then
    until the Rayleigh quotient settles to ``rtol``), inflated by ``inflate``.
    """
    from .linalg import sparse_cholesky

    n = L_h.shape[0]
    Mf = sparse_cholesky(M_h)
    x = np.random.default_rng(seed).standard_normal(n)
    x /= np.sqrt(x @ (M_h @ x))
    rq_old = 0.0
    rq = 0.0
    for k in range(1, maxsteps + 1):
        y = Mf.solve(L_h @ x)
        rq = float(x @ (L_h @ x))
        nrm = math.sqrt(float(y @ (M_h @ y)))
        if not np.isfinite(nrm) or nrm == 0.0:
            raise RuntimeError("power iteration broke down")
        x = y / nrm
        if k >= steps and abs(rq - rq_old) <= rtol * rq:
            break
        rq_old = rq
    else:
        raise RuntimeError(f"power iteration stagnated after {maxsteps} steps (estimate {rq:.6e})")
    return (float(lam_min), max(inflate * rq, inflate * lam_min))


# ---------------------------------------------------------------- fitting


def _aaa(z, F, mmax):
    """Barycentric AAA on real samples; returns poles, residues, value at infinity."""
    M = len(z)
    mask = np.ones(M, bool)
    zj, fj = [], []
    R = np.full(M, F.mean())
    w = None
    for _ in range(mmax + 1):
        j = int(np.argmax(np.abs(F - R) * mask))
        zj.append(z[j])
        fj.append(F[j])
        mask[j] = False
        Z, Fj = np.array(zj), np.array(fj)
        C = 1.0 / (z[mask, None] - Z[None, :])
        A = (F[mask, None] - Fj[None, :]) * C
        w = np.linalg.svd(A, full_matrices=False)[2][-1]
        R = F.copy()
        R[mask] = (C @ (w * Fj)) / (C @ w)
    k = len(zj)
    B = np.eye(k + 1)
    B[0, 0] = 0.0
    E = np.zeros((k + 1, k + 1))
    E[0, 1:] = w
    E[1:, 0] = 1.0
    np.fill_diagonal(E[1:, 1:], Z)
    pol = sla.eigvals(E, B)
    return pol[np.isfinite(pol)]


def _initial_poles(target, lo, hi, m):
    """Real positive poles from Moebius-variable AAA, padded to ``m`` poles."""
    x = np.geomspace(lo, hi, _AAA_POINTS)
    F = target_function(target, x)
    F = F / np.abs(F).max()
    sig = math.sqrt(lo * hi)
    eta = _aaa((x - sig) / (x + sig), F, m)
    xi = sig * (1 + eta) / (1 - eta)
    real = np.abs(xi.imag) <= 1e-8 * np.abs(xi)
    p = -xi[real].real
    p = np.sort(p[(p > 0) & np.isfinite(p)])[::-1][:m]
    q = np.log(np.sort(p)) if len(p) else np.array([])
    # complex or negative AAA poles are dropped; refill the widest log gaps
    lo_q, hi_q = math.log(lo) - 3.0, math.log(hi) + 1.0
    while len(q) < m:
        grid = np.concatenate([[lo_q], q, [hi_q]])
        g = int(np.argmax(np.diff(grid)))
        q = np.sort(np.append(q, 0.5 * (grid[g] + grid[g + 1])))
    return q


def _lsq(x, p, F, w):
    """Weighted least squares for ``c0, c_k``; residual in extended precision."""
    Phi = np.hstack([np.ones((len(x), 1), LD), 1 / (x[:, None] + p.astype(LD)[None, :])])
    A = w[:, None] * Phi
    scale = np.sqrt((A * A).sum(0))
    As = A / scale
    Q, R = np.linalg.qr(As.astype(float))
    rhs = w * F
    c = np.zeros(len(scale), LD)
    for _ in range(4):  # iterative refinement
        r = rhs - As @ c
        c = c + sla.solve_triangular(R, Q.T @ r.astype(float)).astype(LD)
    r = rhs - As @ c
    return c / scale, r, Q


def _varpro(q, x, F, w, iters, qbounds, lam=1e-3):
    """Levenberg-Marquardt on log-poles with residues projected out."""
    p = np.exp(q)
    c, r, Q = _lsq(x, p, F, w)
    nr = float(np.sqrt((r * r).sum()))
    xd, wd = x.astype(float), w.astype(float)
    n = len(q)
    for _ in range(iters):
        cd = c.astype(float)
        D = -wd[:, None] * (cd[1:] * p)[None, :] / (xd[:, None] + p[None, :]) ** 2
        J = -(D - Q @ (Q.T @ D))  # Kaufman approximation
        sc = np.linalg.norm(J, axis=0) + 1e-300
        Js = J / sc
        rd = np.concatenate([r.astype(float), np.zeros(n)])
        improved = False
        for _ in range(20):
            aug = np.vstack([Js, math.sqrt(lam) * np.eye(n)])
            dq = -np.linalg.lstsq(aug, rd, rcond=None)[0] / sc
            qn = np.clip(q + np.clip(dq, -0.5, 0.5), *qbounds)
            pn = np.exp(qn)
            c2, r2, Q2 = _lsq(x, pn, F, w)
            n2 = float(np.sqrt((r2 * r2).sum()))
            if np.isfinite(n2) and n2 < nr:
                gain = (nr - n2) / nr
                q, p, c, r, Q, nr = qn, pn, c2, r2, Q2, n2
                lam = max(lam / 4, 1e-12)
                improved = True
                break
            lam *= 4
        if not improved or gain < 1e-6:
            break
    return q


def _grow(q, lo, hi, m):
    """Pad log-poles ``q`` to ``m`` entries by bisecting the widest log gaps."""
    q = np.sort(q)
    while len(q) < m:
        grid = np.concatenate([[math.log(lo) - 3.0], q, [math.log(hi) + 1.0]])
        g = int(np.argmax(np.diff(grid)))
        q = np.sort(np.append(q, 0.5 * (grid[g] + grid[g + 1])))
    return q


def _fit_degree(target, lo, hi, m, lawson_steps=30, q0=None):
    """Best ``(err, c, p)`` found for ``m`` poles.

    ``err`` is the relative sup error on the fit grid, taking the larger of
    the extended-precision residual and the error of the double-precision
    evaluation (which exposes cancellation between large residues).
    """
    x = LD(lo) * (LD(hi) / LD(lo)) ** (np.arange(_FIT_POINTS, dtype=LD) / (_FIT_POINTS - 1))
    F = target_function(target, x)
    fs = np.abs(F).max()
    F = F / fs
    xd = np.geomspace(lo, hi, _VERIFY_POINTS)
    Fd = target_function(target, xd) / float(fs)
    qb = (math.log(lo) - 40.0, math.log(hi) + 10.0)
    q = _initial_poles(target, lo, hi, m) if q0 is None else _grow(q0, lo, hi, m)
    w = np.ones(_FIT_POINTS, LD)
    q = _varpro(q, x, F, w, 80, qb)
    best = None
    for _ in range(lawson_steps):
        p = np.exp(q)
        c, r, _ = _lsq(x, p, F, w)
        e = np.abs(r / w)
        cd = c.astype(float)
        ed = np.abs(cd[0] + (cd[1:] / (xd[:, None] + p)).sum(1) - Fd).max()
        emax = max(float(e.max()), float(ed))
        if best is None or emax < best[0]:
            best = (emax, cd * float(fs), p)
        w = w * np.sqrt(e / e.max())
        w = np.maximum(w / w.max(), LD(1e-6))
        q = _varpro(q, x, F, w, 8, qb)
    return best


def _constant_value(target):
    a, s, b, t = target
    exps = {e for wgt, e in ((a, s), (b, t)) if wgt}
    if exps == {0.0}:
        return 1.0 / ((a if a else 0.0) + (b if b else 0.0))
    return None


def _check_target(target, interval, eps_ra):
    a, s, b, t = (float(v) for v in target)
    if a < 0 or b < 0:
        raise ValueError("weights alpha, beta must be non-negative")
    if a == 0 and b == 0:
        raise ValueError("weights alpha, beta are both zero")
    for wgt, e in ((a, s), (b, t)):
        if wgt and not -1.0 < e < 1.0:
            raise ValueError(f"exponent {e} outside (-1, 1)")
    lo, hi = (float(v) for v in interval)
    if not 0 < lo < hi:
        raise ValueError(f"invalid interval [{lo}, {hi}]")
    if not 1e-15 <= eps_ra <= 1e-2:
        raise ValueError(f"eps_ra={eps_ra} outside [1e-15, 1e-2]")
    return (a, s, b, t), (lo, hi)


def fit_rational(target, interval, eps_ra: float, max_degree: int = MAX_DEGREE, start_degree: int | None = None) -> RationalApprox:
    """Fit ``1 / (alpha x^s + beta x^t)`` on ``interval`` to relative accuracy ``eps_ra``.

    The degree is increased until :func:`verify_ra` passes.  Deterministic.

    Raises
    ------
    RAFitError
        If ``eps_ra`` is not reached by ``max_degree`` poles (or the error
        stagnates before); the exception carries the best error achieved.
    """
    target, (lo, hi) = _check_target(target, interval, eps_ra)
    const = _constant_value(target)
    if const is not None:
        ra = RationalApprox(const, [], [], eps_ra, (lo, hi), target)
        ra.achieved = verify_ra(ra)
        return ra
    m = start_degree or 8
    best_err, best_ra, stall = math.inf, None, 0
    prev = None
    while m <= max_degree:
        fits = [_fit_degree(target, lo, hi, m)]
        if prev is not None and best_err < 100 * eps_ra:
            # near the floor a warm start from the previous poles avoids spurious pole pairs
            fits.append(_fit_degree(target, lo, hi, m, q0=np.log(np.maximum(prev.poles, 1e-300))))
        cands = []
        for _, c, p in fits:
            cand = RationalApprox(float(c[0]), c[1:], p, eps_ra, (lo, hi), target)
            cand.achieved = verify_ra(cand)
            cands.append(cand)
        ra = min(cands, key=lambda r: r.achieved)
        err = ra.achieved
        prev = ra
        if err <= eps_ra:
            return ra
        stall = 0 if err < 0.5 * best_err else stall + 1
        if err < best_err:
            best_err, best_ra = err, ra
        if stall >= (5 if best_err < 100 * eps_ra else 3):
            break
        m += 2 if err < 1e3 * eps_ra else 4
    raise RAFitError(
        f"rational fit of target {target} on [{lo:.3g}, {hi:.3g}] reached {best_err:.3e} > eps {eps_ra:.1e}",
        best_err,
        best_ra.m if best_ra is not None else 0,
        best_ra,
    )


def verify_ra(ra: RationalApprox, npts: int = _VERIFY_POINTS) -> float:
    """``sup |f - f_RA| / sup |f|`` on a geometric grid of ``npts`` points."""
    lo, hi = ra.interval
    x = np.geomspace(lo, hi, npts)
    F = target_function(ra.target, x)
    return float(np.abs(ra(x) - F).max() / np.abs(F).max())


# ---------------------------------------------------------------- application


class RationalSolver:
    """``c0 M^{-1} + sum_k c_k (L + p_k M)^{-1}`` with cached factorizations."""

    def __init__(self, ra: RationalApprox, L_h, M_h):
        from .linalg import sparse_cholesky

        if L_h.shape != M_h.shape:
            raise ValueError("L_h and M_h differ in shape")
        self.ra = ra
        self.dim = L_h.shape[0]
        L_h, M_h = sp.csr_matrix(L_h), sp.csr_matrix(M_h)
        self._mass = sparse_cholesky(M_h) if ra.c0 != 0.0 else None
        self._shifted = [sparse_cholesky((L_h + p * M_h).tocsr()) for p in ra.poles]
        self.applications = 0

    @property
    def factor_sizes(self):
        fs = [f.n for f in self._shifted]
        return fs + ([self._mass.n] if self._mass is not None else [])

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.dim:
            raise ValueError(f"vector of length {b.shape[0]} for operator of size {self.dim}")
        self.applications += 1
        x = np.zeros_like(b)
        if self._mass is not None:
            x += self.ra.c0 * self._mass.solve(b)
        for c, fac in zip(self.ra.residues, self._shifted):  # fixed order
            x += c * fac.solve(b)
        return x

    __call__ = solve


def apply_ra(ra: RationalApprox, L_h, M_h, b):
    """One-shot ``f_RA(L_h)`` applied to the dual vector ``b``."""
    return RationalSolver(ra, L_h, M_h).solve(b)


class RationalPower:
    """Matrix-free ``L^t`` (coefficients to duals) evaluated by rational approximation.

    For ``t <= 0`` this is ``M f(L) M`` with ``f = x^t``; for ``t > 0`` it is
    ``L f(L) M`` with ``f = x^(t-1)``.
    """

    def __init__(self, L_h, M_h, t: float, eps_ra: float, interval=None, ra: RationalApprox | None = None):
        if not -1.0 < t < 1.0:
            raise ValueError(f"exponent {t} outside (-1, 1)")
        self.L = sp.csr_matrix(L_h)
        self.M = sp.csr_matrix(M_h)
        self.t = t
        self.dim = self.L.shape[0]
        e = -t if t <= 0 else 1.0 - t
        if ra is None:
            interval = interval or estimate_spectral_interval(self.L, self.M)
            ra = fit_rational((1.0, e, 0.0, 0.0), interval, eps_ra)
        self.ra = ra
        self.solver = RationalSolver(ra, self.L, self.M)

    def apply(self, x):
        y = self.solver.solve(self.M @ x)
        return self.M @ y if self.t <= 0 else self.L @ y


class RACache:
    """Fits keyed by ``(target, interval, eps_ra)``, optionally persisted as text files.

    Failed fits are remembered in memory so that a sweep pays for them once.
    """

    def __init__(self, directory=None):
        self.directory = directory
        self._fits = {}
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(target, interval, eps_ra):
        return (tuple(float(v) for v in target), tuple(float(v) for v in interval), float(eps_ra))

    def _path(self, key):
        import hashlib
        import os

        digest = hashlib.sha1(repr(key).encode()).hexdigest()[:16]
        return os.path.join(self.directory, f"ra_{digest}.txt")

    def get(self, target, interval, eps_ra) -> RationalApprox:
        import os

        key = self.key(target, interval, eps_ra)
        if key not in self._fits and self.directory:
            path = self._path(key)
            if os.path.exists(path):
                with open(path) as fh:
                    self._fits[key] = RationalApprox.from_text(fh.read())
        if key in self._fits:
            self.hits += 1
            hit = self._fits[key]
            if isinstance(hit, RAFitError):
                raise hit
            return hit
        self.misses += 1
        try:
            ra = fit_rational(key[0], key[1], key[2])
        except RAFitError as exc:
            self._fits[key] = exc
            raise
        self._fits[key] = ra
        if self.directory:
            os.makedirs(self.directory, exist_ok=True)
            with open(self._path(key), "w") as fh:
                fh.write(ra.to_text())
        return ra
