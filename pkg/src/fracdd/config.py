"""Plain ``key = value`` configuration files with command-line overrides."""
from __future__ import annotations

from dataclasses import fields

from .experiments import PRESETS, ExperimentConfig

__all__ = ["ConfigError", "parse_config", "parse_config_text", "DEFAULT_PRESET"]

DEFAULT_PRESET = {
    "model2d": "model2d",
    "model3d": "model3d",
    "lazy3d": "lazy3d",
    "graddiv": "graddiv",
    "baseline": "baseline",
    "darcy-stokes": "ds-appendix",
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _convert(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            items = [v for v in raw.replace(";", ",").split(",") if v.strip()]
            kind = int if key == "n" else float
            return tuple(kind(v) for v in items)
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: malformed value {raw!r}") from None


def parse_config_text(text: str) -> dict:
    """``{key: raw string}`` from ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_config(path=None, preset: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Validated config: preset defaults, then the file, then ``overrides``.

    Raises
    ------
    ConfigError
        Unknown keys, malformed values or out-of-range values.
    """
    defaults = {f.name: f.default for f in fields(ExperimentConfig)}
    values = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}")
        values.update(PRESETS[preset])
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    raw.update({k.replace("-", "_"): str(v) for k, v in (overrides or {}).items()})
    for key, value in raw.items():
        if key not in defaults:
            raise ConfigError(f"{key}: unknown key")
        values[key] = _convert(key, value, defaults[key])
    try:
        return ExperimentConfig(**values).validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
