"""Parameter sweeps for the interface-perturbed model problems.

Every sweep returns a list of row dicts whose keys are :data:`ROW_FIELDS`
(plus ``error`` and ``extra``).  Solver failures are recorded per row and
never abort a sweep.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .assemble import (assemble_load, assemble_p1_bulk, assemble_perturbed_operator, assemble_surface_pair,
                       build_dof_partition, dirichlet_dofs)
from .ddprec import DDPreconditioner, build_schur_preconditioner
from .fem import LagrangeSpace
from .hdiv import assemble_graddiv_bdm, dg_trace_pair
from .levels import lagrange_hierarchy, mesh_levels
from .linalg import IndefiniteError, NotPositiveDefiniteError, pcg, sparse_cholesky
from .mesh import build_unit_cube_mesh, build_unit_square_mesh, extract_trace_mesh
from .ra import RACache, RAFitError, RationalPower, estimate_spectral_interval
from .spectral import SpectralPower, factorization_count, gevp_factorize
from .stokes import error_norms

__all__ = [
    "ROW_FIELDS",
    "ExperimentConfig",
    "PRESETS",
    "preset_config",
    "run_model_problem",
    "run_lazy_model_problem",
    "run_graddiv",
    "run_baseline",
    "run_darcy_stokes",
    "model_problem_mms",
    "iteration_spread",
]

ROW_FIELDS = ("experiment", "d", "n", "h", "dofs", "interface_dofs", "K", "mu", "gamma", "alpha", "t",
              "schur_mode", "eps_ra", "a00_mode", "outer_iters", "inner_iters_max", "inner_iters_mean",
              "converged", "setup_s", "solve_s")

_T_GRID = (-0.75, -0.5, -0.25, 0.25, 0.5, 0.75)
_GAMMA_GRID = (1e-4, 1e-2, 1.0, 1e2, 1e4)


@dataclass
class ExperimentConfig:
    """Sweep parameters; list-valued fields are swept as a Cartesian product."""

    problem: str = "model2d"
    d: int = 2
    n: tuple = (8, 16, 32, 64)
    K: tuple = (1.0,)
    gamma: tuple = _GAMMA_GRID
    t: tuple = _T_GRID
    mu: tuple = (1.0,)
    alpha: float = 0.0
    schur_mode: str = "exact"
    eps_ra: float = 1e-14
    a00_mode: str = "cholesky"
    operator_mode: str = "spectral"
    velocity_mode: str = "exact"
    rtol: float = 1e-10
    inner_rtol: float = 1e-5
    maxit: int = 500
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        """Raise ``ValueError`` naming the offending field."""
        def bad(key, why):
            raise ValueError(f"{key}: {why}")

        if self.d not in (2, 3):
            bad("d", f"must be 2 or 3, got {self.d}")
        if not self.n or any(int(v) < 1 for v in self.n):
            bad("n", "needs positive mesh sizes")
        if any(not v > 0 for v in self.K):
            bad("K", "must be positive")
        if any(not v > 0 for v in self.mu):
            bad("mu", "must be positive")
        if any(v < 0 for v in self.gamma):
            bad("gamma", "must be non-negative")
        if any(not -1.0 < v < 1.0 for v in self.t):
            bad("t", "must lie in (-1, 1)")
        if self.alpha < 0:
            bad("alpha", "must be non-negative")
        if self.schur_mode not in ("exact", "rational"):
            bad("schur_mode", "must be exact or rational")
        if self.a00_mode not in ("cholesky", "vcycle"):
            bad("a00_mode", "must be cholesky or vcycle")
        if self.operator_mode not in ("spectral", "rational"):
            bad("operator_mode", "must be spectral or rational")
        if self.velocity_mode not in ("exact", "vcycle"):
            bad("velocity_mode", "must be exact or vcycle")
        if not 1e-15 <= self.eps_ra <= 1e-2:
            bad("eps_ra", "must lie in [1e-15, 1e-2]")
        for key in ("rtol", "inner_rtol"):
            if not 0.0 < getattr(self, key) < 1.0:
                bad(key, "must lie in (0, 1)")
        if self.maxit < 1:
            bad("maxit", "must be positive")
        return self

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name} = " + (",".join(repr(x) for x in v) if isinstance(v, tuple) else str(v)))
        return "\n".join(out) + "\n"

    @classmethod
    def field_types(cls):
        return {f.name: f.default for f in fields(cls)}


PRESETS = {
    "model2d": dict(problem="model2d", d=2, n=(8, 16, 32, 64), rtol=1e-10, eps_ra=1e-14),
    "model3d": dict(problem="model3d", d=3, n=(2, 4, 8), rtol=1e-10, eps_ra=1e-14),
    "lazy3d": dict(problem="lazy3d", d=3, n=(4, 8, 16), t=(-0.5,), gamma=(1e-2, 1.0, 1e2), schur_mode="rational",
                   operator_mode="rational", a00_mode="vcycle", eps_ra=1e-14),
    "graddiv": dict(problem="graddiv", d=2, n=(4, 8, 16), gamma=(0.0, 1e-2, 1.0, 1e2), t=(-0.5,)),
    "baseline": dict(problem="baseline", d=2, n=(16, 32, 64), K=(1.0,), gamma=(0.0, 1.0, 1e2, 1e4), t=(-0.5,)),
    "ds-appendix": dict(problem="darcy-stokes", d=2, n=(4, 8, 16), mu=(1.0, 1e-2, 1e-4, 1e-6),
                        K=(1.0, 1e-2, 1e-4, 1e-6), alpha=3.0, inner_rtol=1e-5, eps_ra=1e-12, rtol=1e-10),
    "ds-scalable": dict(problem="darcy-stokes", d=2, n=(4, 8, 16), mu=(1e-4,), K=(1e-2,), alpha=0.0,
                        inner_rtol=1e-4, eps_ra=1e-14, schur_mode="rational", a00_mode="vcycle",
                        operator_mode="rational", velocity_mode="vcycle", rtol=1e-10),
}
PRESETS["appendix"] = PRESETS["ds-appendix"]
PRESETS["darcy-stokes"] = PRESETS["ds-appendix"]


def preset_config(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ValueError(f"preset: unknown preset {name!r}")
    return ExperimentConfig(**{**PRESETS[name], **overrides}).validate()


def iteration_spread(rows, key=("K", "gamma", "t", "mu")) -> dict:
    """``max - min`` of ``outer_iters`` over ``n`` per parameter point (converged rows only)."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r.get(k) for k in key), []).append(r)
    out = {}
    for k, rs in groups.items():
        its = [r["outer_iters"] for r in rs if r["converged"]]
        out[k] = (max(its) - min(its)) if len(its) == len(rs) and its else None
    return out


# ---------------------------------------------------------------- helpers


def _row(**kw):
    row = dict.fromkeys(ROW_FIELDS)
    row.update(kw)
    row.setdefault("error", "")
    row.setdefault("extra", {})
    return row


def _box(d: int):
    return build_unit_square_mesh if d == 2 else build_unit_cube_mesh


def _boundary_trace(mesh):
    return extract_trace_mesh(mesh, set(np.unique(mesh.facet_markers).tolist()))


def _rhs(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(n)


def _interior_vcycle(d: int, n: int, A00):
    """V-cycle for ``A00`` on the interior P1 dofs of the unit box."""
    meshes = mesh_levels(_box(d), n, coarsest=2)

    def mask(V):
        m = np.ones(V.dim, dtype=bool)
        m[dirichlet_dofs(V, set(np.unique(V.mesh.facet_markers).tolist()))] = False
        return m

    return lagrange_hierarchy(A00, meshes, 1, mask)


class _Level:
    """Mesh, operators and factorizations shared by all parameter points at one ``n``."""

    def __init__(self, d: int, n: int, need_gevp: bool):
        self.d, self.n = d, n
        self.mesh = _box(d)(n)
        self.trace = _boundary_trace(self.mesh)
        self.part = build_dof_partition(self.mesh, self.trace, "P1")
        self.L, self.M = assemble_surface_pair(self.trace, 1)
        self.F = gevp_factorize(self.L, self.M) if need_gevp else None
        self._bulk = {}
        self._a00 = {}

    def bulk(self, K):
        if K not in self._bulk:
            self._bulk[K] = assemble_p1_bulk(self.mesh, K)
        return self._bulk[K]

    def a00(self, K, mode, A00):
        if (K, mode) not in self._a00:
            self._a00[(K, mode)] = (sparse_cholesky(A00) if mode == "cholesky"
                                    else _interior_vcycle(self.d, self.n, A00))
        return self._a00[(K, mode)]


def _run_pcg(op, prec, b, cfg):
    t0 = time.perf_counter()
    try:
        x, rep = pcg(op, prec, b, rtol=cfg.rtol, maxit=cfg.maxit)
        return rep, "", time.perf_counter() - t0
    except (IndefiniteError, NotPositiveDefiniteError, np.linalg.LinAlgError) as exc:
        return None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0


def _fit(cache, target, interval, eps):
    """RA or an error string."""
    try:
        return cache.get(target, interval, eps), ""
    except RAFitError as exc:
        return None, f"RAFitError: achieved {exc.achieved:.2e} > eps {eps:.0e} (m={exc.degree})"


# ---------------------------------------------------------------- model problem


def run_model_problem(cfg: ExperimentConfig, cache: RACache | None = None, experiment: str | None = None,
                      progress=None) -> list:
    """PCG with the DD preconditioner for ``K(-Delta + I) + gamma T' L^t T`` on the unit box.

    One row per ``(n, K, gamma, t)``.  Rational fits (preconditioner and, in
    ``operator_mode="rational"``, the perturbation) use the spectral interval
    of the finest mesh, so the same approximation serves all ``n``.
    """
    cfg.validate()
    cache = cache if cache is not None else RACache()
    experiment = experiment or cfg.problem
    need_gevp = cfg.schur_mode == "exact" or cfg.operator_mode == "spectral"
    rational = cfg.schur_mode == "rational" or cfg.operator_mode == "rational"
    interval = None
    if rational:
        fine = _Level(cfg.d, max(cfg.n), False)
        interval = tuple(estimate_spectral_interval(fine.L, fine.M))
    rows = []
    for n in cfg.n:
        t_level = time.perf_counter()
        lev = _Level(cfg.d, n, need_gevp)
        level_s = time.perf_counter() - t_level
        for K, gamma, t in itertools.product(cfg.K, cfg.gamma, cfg.t):
            base = dict(experiment=experiment, d=cfg.d, n=n, h=1.0 / n, dofs=lev.part.ndofs,
                        interface_dofs=lev.L.shape[0], K=K, gamma=gamma, t=t, schur_mode=cfg.schur_mode,
                        eps_ra=cfg.eps_ra if rational else None, a00_mode=cfg.a00_mode)
            t0 = time.perf_counter()
            err = ""
            if cfg.operator_mode == "spectral":
                op = SpectralPower(lev.F, t)
            else:
                ra_op, err = _fit(cache, (1.0, -t if t <= 0 else 1.0 - t, 0.0, 0.0), interval, cfg.eps_ra)
                op = RationalPower(lev.L, lev.M, t, cfg.eps_ra, ra=ra_op) if ra_op is not None else None
            terms = [(K, 0.5)] + ([(gamma, t)] if gamma > 0 else [])
            if not err and cfg.schur_mode == "rational":
                target = (K, 0.5, gamma, t) if gamma > 0 else (K, 0.5, 0.0, 0.0)
                ra, err = _fit(cache, target, interval, cfg.eps_ra)
            if err:
                rows.append(_row(**base, converged=False, error=err))
                continue
            blocks = assemble_perturbed_operator(lev.bulk(K), lev.part, gamma, op, K=K)
            if cfg.schur_mode == "exact":
                schur = build_schur_preconditioner(lev.L, lev.M, terms, "exact", factorization=lev.F)
            else:
                schur = build_schur_preconditioner(lev.L, lev.M, terms, "rational", ra=ra)
            prec = DDPreconditioner(blocks, schur, lev.a00(K, cfg.a00_mode, blocks.A00))
            setup = time.perf_counter() - t0 + level_s
            rep, err, solve = _run_pcg(blocks, prec, _rhs(lev.part.ndofs, cfg.seed), cfg)
            extra = {"schur_m": schur.ra.m if schur.ra is not None else None}
            if rational and cfg.operator_mode == "rational":
                extra["operator_m"] = op.ra.m
                extra["factor_sizes"] = max(op.solver.factor_sizes + (schur.solver.factor_sizes
                                                                      if schur.solver else []))
            rows.append(_row(**base, outer_iters=rep.iterations if rep else None,
                             converged=bool(rep and rep.converged), setup_s=setup, solve_s=solve,
                             error=err, extra=extra))
            if progress:
                progress(rows[-1])
    return rows


def run_lazy_model_problem(cfg: ExperimentConfig, cache: RACache | None = None, progress=None) -> list:
    """3D model problem with rational approximation for both the perturbation and ``S^{-1}``.

    ``A00`` is one multigrid V-cycle.  Raises ``AssertionError`` if any
    eigen-factorization is built or any sparse factorization is larger than
    the interface.
    """
    cfg = ExperimentConfig(**{**asdict(cfg), "schur_mode": "rational", "operator_mode": "rational",
                              "a00_mode": "vcycle"}).validate()
    before = factorization_count()
    rows = run_model_problem(cfg, cache, experiment="lazy3d", progress=progress)
    if factorization_count() != before:
        raise AssertionError("dense eigen-factorization constructed on the lazy path")
    for r in rows:
        fs = (r.get("extra") or {}).get("factor_sizes")
        if fs is not None and fs > r["interface_dofs"]:
            raise AssertionError(f"factorization of size {fs} exceeds the interface dimension")
    return rows


# ---------------------------------------------------------------- grad-div


def run_graddiv(cfg: ExperimentConfig, cache: RACache | None = None, progress=None) -> list:
    """BDM grad-div problem with ``S = K L^{-1/2} + gamma M`` on discontinuous P1 traces."""
    cfg.validate()
    if cfg.d != 2:
        raise ValueError("d: grad-div experiment is 2D only")
    cache = cache if cache is not None else RACache()
    rational = cfg.schur_mode == "rational"
    interval = None
    if rational:
        tr = _boundary_trace(build_unit_square_mesh(max(cfg.n)))
        interval = tuple(estimate_spectral_interval(*dg_trace_pair(tr)))
    rows = []
    for n in cfg.n:
        mesh = build_unit_square_mesh(n)
        trace = _boundary_trace(mesh)
        L, M = dg_trace_pair(trace)
        F = gevp_factorize(L, M) if not rational else None
        for K, gamma in itertools.product(cfg.K, cfg.gamma):
            t0 = time.perf_counter()
            blocks = assemble_graddiv_bdm(mesh, K, gamma, trace)
            base = dict(experiment="graddiv", d=2, n=n, h=1.0 / n, dofs=blocks.shape[0], interface_dofs=L.shape[0],
                        K=K, gamma=gamma, schur_mode=cfg.schur_mode, eps_ra=cfg.eps_ra if rational else None,
                        a00_mode="cholesky")
            terms = [(K, -0.5)] + ([(gamma, 0.0)] if gamma > 0 else [])
            if rational:
                ra, err = _fit(cache, (K, -0.5, gamma, 0.0), interval, cfg.eps_ra)
                if err:
                    rows.append(_row(**base, converged=False, error=err))
                    continue
                schur = build_schur_preconditioner(L, M, terms, "rational", ra=ra)
            else:
                schur = build_schur_preconditioner(L, M, terms, "exact", factorization=F)
            prec = DDPreconditioner(blocks, schur)
            setup = time.perf_counter() - t0
            rep, err, solve = _run_pcg(blocks, prec, _rhs(blocks.shape[0], cfg.seed), cfg)
            rows.append(_row(**base, outer_iters=rep.iterations if rep else None,
                             converged=bool(rep and rep.converged), setup_s=setup, solve_s=solve, error=err))
            if progress:
                progress(rows[-1])
    return rows


# ---------------------------------------------------------------- baseline


def run_baseline(cfg: ExperimentConfig, progress=None) -> list:
    """Bulk-only multigrid versus DD for ``K(-Delta + I) + gamma T' L^t T`` with Gamma one side.

    Gamma is the bottom edge ``y = 0``.  The baseline preconditioner is a
    V-cycle for ``K(-Delta + I)`` that ignores the perturbation.
    """
    cfg.validate()
    if cfg.d != 2:
        raise ValueError("d: baseline experiment is 2D only")
    rows = []
    for n in cfg.n:
        mesh = build_unit_square_mesh(n)
        trace = extract_trace_mesh(mesh, {3})
        part = build_dof_partition(mesh, trace, "P1")
        L, M = assemble_surface_pair(trace, 1)
        F = gevp_factorize(L, M)
        meshes = mesh_levels(build_unit_square_mesh, n, coarsest=2)
        for K, gamma, t in itertools.product(cfg.K, cfg.gamma, cfg.t):
            bulk = assemble_p1_bulk(mesh, K)
            blocks = assemble_perturbed_operator(bulk, part, gamma, SpectralPower(F, t), K=K)
            b = _rhs(part.ndofs, cfg.seed)
            base = dict(d=2, n=n, h=1.0 / n, dofs=part.ndofs, interface_dofs=L.shape[0], K=K, gamma=gamma, t=t)
            t0 = time.perf_counter()
            mg = lagrange_hierarchy(bulk, meshes, 1, lambda V: np.ones(V.dim, dtype=bool))
            setup = time.perf_counter() - t0
            rep, err, solve = _run_pcg(blocks, mg, b, cfg)
            rows.append(_row(experiment="baseline-bulk-gmg", **base, schur_mode="none", a00_mode="vcycle",
                             outer_iters=rep.iterations if rep else cfg.maxit,
                             converged=bool(rep and rep.converged), setup_s=setup, solve_s=solve, error=err))
            if progress:
                progress(rows[-1])
            t0 = time.perf_counter()
            terms = [(K, 0.5)] + ([(gamma, t)] if gamma > 0 else [])
            schur = build_schur_preconditioner(L, M, terms, "exact", factorization=F)
            prec = DDPreconditioner(blocks, schur)
            setup = time.perf_counter() - t0
            rep, err, solve = _run_pcg(blocks, prec, b, cfg)
            rows.append(_row(experiment="baseline-dd", **base, schur_mode="exact", a00_mode="cholesky",
                             outer_iters=rep.iterations if rep else cfg.maxit,
                             converged=bool(rep and rep.converged), setup_s=setup, solve_s=solve, error=err))
            if progress:
                progress(rows[-1])
    return rows


# ---------------------------------------------------------------- Darcy-Stokes


def run_darcy_stokes(cfg: ExperimentConfig, cache: RACache | None = None, progress=None) -> list:
    """FGMRes sweep for the coupled problem over ``(mu, K, n)``.

    ``schur_mode="exact"`` runs the exact-block Darcy preconditioner;
    ``"rational"`` the scalable one (V-cycle ``A00`` and rational
    approximations at ``eps_ra``).
    """
    from .darcystokes import assemble_darcy_stokes, build_ds_preconditioner, solve_darcy_stokes

    cfg.validate()
    cache = cache if cache is not None else RACache()
    mode = "exact" if cfg.schur_mode == "exact" else "scalable"
    interval = None
    if mode == "scalable":
        from .mesh import build_two_domain_mesh

        tr = build_two_domain_mesh(max(cfg.n))[2]
        interval = tuple(estimate_spectral_interval(*assemble_surface_pair(tr, 2)))
    rows = []
    for n in cfg.n:
        for mu, K in itertools.product(cfg.mu, cfg.K):
            t0 = time.perf_counter()
            sys = assemble_darcy_stokes(n, mu, K, cfg.alpha, data="random", seed=cfg.seed)
            base = dict(experiment="darcy-stokes", d=2, n=n, h=1.0 / n, dofs=sys.shape[0],
                        interface_dofs=2 * n + 1, K=K, mu=mu, alpha=cfg.alpha, schur_mode=cfg.schur_mode,
                        eps_ra=cfg.eps_ra if mode == "scalable" else None,
                        a00_mode="cholesky" if mode == "exact" else "vcycle")
            try:
                prec = build_ds_preconditioner(sys, cfg.inner_rtol, mode, cfg.eps_ra, velocity=cfg.velocity_mode,
                                               interval=interval, ra_cache=cache)
            except RAFitError as exc:
                rows.append(_row(**base, converged=False, error=f"RAFitError: achieved {exc.achieved:.2e}"))
                continue
            setup = time.perf_counter() - t0
            try:
                _, rep = solve_darcy_stokes(sys, prec, rtol=cfg.rtol, maxit=cfg.maxit)
                err = ""
            except (IndefiniteError, np.linalg.LinAlgError) as exc:
                rep, err = None, f"{type(exc).__name__}: {exc}"
            rows.append(_row(**base, outer_iters=rep.iterations if rep else None,
                             inner_iters_max=rep.inner_max if rep else None,
                             inner_iters_mean=rep.inner_mean if rep else None,
                             converged=bool(rep and rep.converged and prec.inner_failures == 0),
                             setup_s=setup, solve_s=rep.solve_seconds if rep else None, error=err,
                             extra={"true_residual": rep.true_residual if rep else None,
                                    "inner_failures": prec.inner_failures}))
            if progress:
                progress(rows[-1])
    return rows


# ---------------------------------------------------------------- manufactured solution


def model_problem_mms(ns=(8, 16, 32, 64), d: int = 2, K: float = 1.0):
    """L2 errors of ``K(-Delta + I) u = f`` with natural conditions and ``u = prod cos(pi x_i)``.

    Returns ``(errors, slope)``.
    """
    errors = []
    for n in ns:
        mesh = _box(d)(n)
        V = LagrangeSpace(mesh, 1)

        def exact(*x):
            return np.prod([np.cos(np.pi * xi) for xi in x], axis=0)

        f = assemble_load(V, lambda *x: K * (d * np.pi ** 2 + 1.0) * exact(*x))
        u = sparse_cholesky(assemble_p1_bulk(mesh, K)).solve(f)
        errors.append(error_norms(V, u, exact)[0])
    slope = float(np.polyfit(np.log(1.0 / np.asarray(ns, dtype=float)), np.log(errors), 1)[0])
    return errors, slope
