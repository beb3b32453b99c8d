"""Numba switch.

Set ``IGWFLOW_NUMBA=0`` in the environment to force the pure numpy/scipy
kernels. The flag is read once at import; tests flip ``kernels.USE_NUMBA``
directly.
"""

import os

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    HAVE_NUMBA = False
    _njit = None


def _env_enabled():
    raw = os.environ.get("IGWFLOW_NUMBA", "1").strip().lower()
    return raw not in ("0", "false", "no", "off")


NUMBA_ENABLED = HAVE_NUMBA and _env_enabled()


def maybe_njit(func):
    """Compile ``func`` with ``njit(cache=True)`` when numba is importable.

    The undecorated function stays reachable as ``compiled.py_func``.
    """
    if not HAVE_NUMBA:
        return func
    return _njit(cache=True)(func)
