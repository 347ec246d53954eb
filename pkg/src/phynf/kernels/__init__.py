"""Hot kernels, compiled when available.

The Cython build is used if it imported cleanly; otherwise (or when
``PHYNF_PURE_PYTHON=1`` is set) the numpy implementation takes over.  Both
expose ``hamgrad_forward`` and ``hamgrad_backward`` with identical semantics.
"""
from __future__ import annotations

import os

from . import _fallback

_forced_pure = os.environ.get("PHYNF_PURE_PYTHON", "").strip() not in ("", "0")

try:
    if _forced_pure:
        raise ImportError("pure-python backend forced by PHYNF_PURE_PYTHON")
    from . import _hamgrad_cy as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "python"

hamgrad_forward = _impl.hamgrad_forward
hamgrad_backward = _impl.hamgrad_backward


def compiled_available() -> bool:
    try:
        from . import _hamgrad_cy  # noqa: F401
    except ImportError:
        return False
    return True


def get_backend(name: str):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _hamgrad_cy

        return _hamgrad_cy
    raise ValueError(f"unknown kernel backend {name!r}")
