"""JIT selection for the hot loops.

Kernels in :mod:`robustlds.kernels` are written once in the numba-compatible
subset of numpy and wrapped with :func:`maybe_njit`.  Setting the environment
variable ``ROBUSTLDS_DISABLE_NUMBA=1`` (before import) keeps the plain-python
versions, which is useful for debugging and for the benchmark comparison.
"""

import os

_FLAG = "ROBUSTLDS_DISABLE_NUMBA"


def numba_requested() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


try:
    if not numba_requested():
        raise ImportError("numba disabled by " + _FLAG)
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    _njit = None
    HAS_NUMBA = False


def maybe_njit(func):
    """Jit ``func`` when numba is active; the original stays on ``.py_func``."""
    if HAS_NUMBA:
        return _njit(cache=True, nogil=True)(func)
    func.py_func = func
    return func
