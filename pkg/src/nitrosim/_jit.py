"""Optional numba acceleration.

Set ``NITROSIM_DISABLE_JIT=1`` to force the pure-numpy kernels even when numba
is importable. The flag is read once at import time.
"""
from __future__ import annotations

import os

_DISABLED = os.environ.get("NITROSIM_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("disabled by NITROSIM_DISABLE_JIT")
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    _njit = None
    HAS_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
