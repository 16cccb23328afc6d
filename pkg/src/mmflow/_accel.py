"""Optional numba acceleration.

Hot kernels are written once in a numba-compatible subset of Python. When
numba is importable and ``MMFLOW_DISABLE_NUMBA`` is unset (or "0"), they are
compiled with ``@njit``; otherwise the plain Python/numpy body runs.
"""
import os

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("MMFLOW_DISABLE_NUMBA", "0") in ("", "0")


def maybe_njit(func):
    """Compile ``func`` with numba when enabled; keep the Python body as ``.py_func``."""
    if USE_NUMBA:
        jitted = numba.njit(cache=True)(func)
        return jitted
    func.py_func = func
    return func
