"""Optional numba acceleration.

Kernels are written twice: a loop version compiled with :func:`njit` and a
vectorised numpy version. ``SUPERCUT_DISABLE_JIT=1`` (read at import time)
makes the dispatchers pick the numpy versions even when numba is installed.
"""
import os

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    _njit = None
    HAVE_NUMBA = False

JIT_DISABLED = os.environ.get("SUPERCUT_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes", "on"}
USE_NUMBA = HAVE_NUMBA and not JIT_DISABLED


def njit(func):
    """Compile ``func`` in nopython mode, or return it untouched without numba."""
    if _njit is None:  # pragma: no cover
        return func
    return _njit(cache=True, nogil=True)(func)


def backend():
    return "numba" if USE_NUMBA else "numpy"
