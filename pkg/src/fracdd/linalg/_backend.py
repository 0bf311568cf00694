"""Backend selection: compiled kernels when importable, else pure Python.

Set ``FRACDD_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

fallback = _fallback
if os.environ.get("FRACDD_PURE_PYTHON", "") not in ("", "0"):
    impl = _fallback
else:
    try:
        from . import _compiled as impl
    except ImportError:  # extension not built
        impl = _fallback

BACKEND = impl.NAME


def get(name: str | None = None):
    """Backend module by name (``"compiled"`` or ``"python"``); default is the active one."""
    if name is None:
        return impl
    if name == "python":
        return _fallback
    if name == "compiled":
        from . import _compiled

        return _compiled
    raise ValueError(f"unknown backend {name!r}")
