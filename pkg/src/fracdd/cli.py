"""Command-line harness: ``fracdd <experiment> [options]``.

Exit status is 0 when every row converged, 1 otherwise and 2 on a
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import itertools
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace

from . import __version__
from .config import DEFAULT_PRESET, ConfigError, parse_config
from .experiments import (ROW_FIELDS, ExperimentConfig, run_baseline, run_darcy_stokes, run_graddiv,
                          run_lazy_model_problem, run_model_problem)
from .ra import RACache, RAFitError, fit_rational

__all__ = ["main", "run", "RunManifest", "write_csv", "write_svg"]

EXPERIMENTS = ("model2d", "model3d", "lazy3d", "graddiv", "baseline", "darcy-stokes")
_OVERRIDES = ("n", "K", "gamma", "t", "mu", "alpha", "schur_mode", "eps_ra", "a00_mode", "operator_mode",
              "velocity_mode", "rtol", "inner_rtol", "maxit")


class RunManifest:
    """Config snapshot, version, timestamp, outputs and per-row status; stored as JSON."""

    def __init__(self, path, command: str, cfg: ExperimentConfig, outputs: dict):
        self.path = path
        self.data = {
            "run_id": _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S%fZ"),
            "command": command,
            "version": __version__,
            "python": platform.python_version(),
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()},
            "outputs": outputs,
            "rows": [],
            "status": "running",
        }

    @property
    def run_id(self) -> str:
        return self.data["run_id"]

    def write(self):
        with open(self.path, "w") as fh:
            json.dump(self.data, fh, indent=1, default=str)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, rows, manifest: RunManifest | None = None):
    """CSV with the fixed column set; the first line is a ``#`` comment naming the manifest."""
    with open(path, "w", newline="") as fh:
        if manifest is not None:
            fh.write(f"# manifest={os.path.basename(manifest.path)} run_id={manifest.run_id}\n")
        w = csv.writer(fh)
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in ROW_FIELDS])


def write_svg(path, rows, title: str, series_key: str = "gamma"):
    """Line chart of outer iterations against ``n`` with one series per ``series_key`` value.

    Best effort: returns ``False`` instead of raising.
    """
    try:
        groups = {}
        for r in rows:
            if r.get("outer_iters") is None:
                continue
            key = tuple(r.get(k) for k in ("experiment", series_key, "t", "K", "mu"))
            groups.setdefault(key, []).append((r["n"], r["outer_iters"]))
        if not groups:
            return False
        ns = sorted({n for pts in groups.values() for n, _ in pts})
        ymax = max(it for pts in groups.values() for _, it in pts) or 1
        W, H, pad = 640, 400, 50
        xs = {n: pad + (W - 2 * pad) * (i / max(len(ns) - 1, 1)) for i, n in enumerate(ns)}

        def y(v):
            return H - pad - (H - 2 * pad) * v / ymax

        palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"]
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" '
               f'font-size="11">',
               f'<text x="{W / 2}" y="20" text-anchor="middle">{title}</text>',
               f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
               f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
               f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle">n</text>',
               f'<text x="15" y="{H / 2}" transform="rotate(-90 15 {H / 2})" text-anchor="middle">iterations</text>']
        for n in ns:
            out.append(f'<text x="{xs[n]:.1f}" y="{H - pad + 15}" text-anchor="middle">{n}</text>')
        for v in (0, ymax // 2, ymax):
            out.append(f'<text x="{pad - 5}" y="{y(v) + 4:.1f}" text-anchor="end">{v}</text>')
        for i, (key, pts) in enumerate(sorted(groups.items(), key=lambda kv: str(kv[0]))):
            pts = sorted(pts)
            color = palette[i % len(palette)]
            coords = " ".join(f"{xs[n]:.1f},{y(it):.1f}" for n, it in pts)
            label = ", ".join(f"{k}={v}" for k, v in zip(("", series_key, "t", "K", "mu"), key) if k and v is not None)
            out.append(f'<polyline fill="none" stroke="{color}" points="{coords}"><title>{label}</title></polyline>')
        out.append("</svg>")
        with open(path, "w") as fh:
            fh.write("\n".join(out) + "\n")
        return True
    except Exception:  # noqa: BLE001 - charts never affect the run
        return False


def _runner(command: str):
    return {
        "model2d": run_model_problem,
        "model3d": run_model_problem,
        "lazy3d": run_lazy_model_problem,
        "graddiv": run_graddiv,
        "baseline": lambda cfg, cache=None: run_baseline(cfg),
        "darcy-stokes": run_darcy_stokes,
    }[command]


def _split(cfg: ExperimentConfig):
    """Independent sub-sweeps (one per parameter point) keeping the full ``n`` list."""
    if cfg.problem == "darcy-stokes":
        return [replace(cfg, mu=(mu,), K=(K,)) for mu, K in itertools.product(cfg.mu, cfg.K)]
    return [replace(cfg, K=(K,), gamma=(g,), t=(t,)) for K, g, t in itertools.product(cfg.K, cfg.gamma, cfg.t)]


def _run_part(args):
    command, cfg, cache_dir = args
    return _runner(command)(cfg, cache=RACache(cache_dir))


def _order(rows, cfg):
    """Rows in config order: n outermost, then the swept parameters."""
    def idx(seq, v):
        return list(seq).index(v) if v in seq else 0

    def key(r):
        return (idx(cfg.n, r["n"]), idx(cfg.mu, r.get("mu")), idx(cfg.K, r.get("K")),
                idx(cfg.gamma, r.get("gamma")), idx(cfg.t, r.get("t")), str(r.get("experiment")))
    return sorted(rows, key=key)


def run(command: str, cfg: ExperimentConfig, out_dir: str, threads: int = 1, quiet: bool = False) -> int:
    """Run one experiment, writing the manifest, CSV and SVG into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    cache_dir = os.path.join(out_dir, "cache")
    stem = os.path.join(out_dir, command)
    outputs = {"csv": stem + ".csv", "svg": stem + ".svg", "manifest": stem + ".manifest.json"}
    manifest = RunManifest(outputs["manifest"], command, cfg, outputs)
    manifest.write()  # before any solve
    if threads > 1:
        parts = _split(cfg)
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = [r for part in pool.map(_run_part, [(command, p, cache_dir) for p in parts]) for r in part]
        rows = _order(rows, cfg)
    else:
        rows = _runner(command)(cfg, cache=RACache(cache_dir))
    write_csv(outputs["csv"], rows, manifest)
    series = "mu" if command == "darcy-stokes" else "gamma"
    manifest.data["svg_written"] = write_svg(outputs["svg"], rows, command, series)
    ok = all(r["converged"] for r in rows)
    manifest.data["rows"] = [{"index": i, "converged": bool(r["converged"]), "error": r.get("error", "")}
                             for i, r in enumerate(rows)]
    manifest.data["status"] = "converged" if ok else "not converged"
    manifest.write()
    if not quiet:
        for r in rows:
            print(",".join(str(_fmt(r.get(k))) for k in ROW_FIELDS) + (f"  # {r['error']}" if r.get("error") else ""))
        print(f"wrote {outputs['csv']}", file=sys.stderr)
    return 0 if ok else 1


def _ra_fit(args) -> int:
    lo, hi = (float(v) for v in args.interval.split(","))
    cache = RACache(os.path.join(args.out_dir, "cache")) if args.out_dir else None
    target = (args.alpha, args.s, args.beta, args.t)
    try:
        ra = cache.get(target, (lo, hi), args.eps) if cache else fit_rational(target, (lo, hi), args.eps)
    except RAFitError as exc:
        print(f"m={exc.degree} verify_ra={exc.achieved:.3e} FAILED eps={args.eps:.1e}")
        return 1
    print(f"m={ra.m} verify_ra={ra.achieved:.3e}")
    if args.show:
        print(ra.to_text(), end="")
    return 0


def _build_parser():
    p = argparse.ArgumentParser(prog="fracdd", description="Interface-perturbed DD preconditioner experiments.")
    p.add_argument("--version", action="version", version=f"fracdd {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name, help=f"run the {name} sweep")
        s.add_argument("--config", help="key = value configuration file")
        s.add_argument("--out-dir", help="output directory (default: $FRACDD_OUT_DIR or ./fracdd-out)")
        s.add_argument("--threads", type=int, default=1, help="worker processes for sweep rows")
        s.add_argument("--preset", help="named parameter preset")
        s.add_argument("--seed", help="right-hand-side seed")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any key")
        s.add_argument("--quiet", action="store_true")
        for key in _OVERRIDES:
            s.add_argument("--" + key.replace("_", "-"), dest="ov_" + key, metavar="VALUE")
    s = sub.add_parser("ra-fit", help="fit 1/(alpha x^s + beta x^t) and report pole count and error")
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--s", type=float, default=0.5)
    s.add_argument("--beta", type=float, default=0.0)
    s.add_argument("--t", type=float, default=0.0)
    s.add_argument("--eps", type=float, default=1e-14)
    s.add_argument("--interval", default="1,1e6", help="lo,hi")
    s.add_argument("--out-dir", help="cache fits under OUT_DIR/cache")
    s.add_argument("--show", action="store_true", help="print poles and residues")
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    if args.command == "ra-fit":
        try:
            return _ra_fit(args)
        except ValueError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"config error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key in _OVERRIDES:
        v = getattr(args, "ov_" + key)
        if v is not None:
            overrides[key] = v
    if args.seed is not None:
        overrides["seed"] = args.seed
    preset = args.preset or DEFAULT_PRESET[args.command]
    if preset == "appendix":
        preset = "ds-appendix"
    try:
        cfg = parse_config(args.config, preset, overrides)
        if args.threads < 1:
            raise ConfigError("threads: must be positive")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out_dir or os.environ.get("FRACDD_OUT_DIR") or "fracdd-out"
    return run(args.command, cfg, out_dir, args.threads, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
