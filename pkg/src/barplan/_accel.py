"""JIT switch for the hot kernels.

Set ``BARPLAN_DISABLE_NUMBA=1`` to run the pure-numpy reference kernels
instead of the numba-compiled ones. The flag is read once at import.
"""

import os

DISABLE_NUMBA = os.getenv("BARPLAN_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    import numba as _nb
except ImportError:  # pragma: no cover
    _nb = None

USE_NUMBA = (_nb is not None) and not DISABLE_NUMBA

NUMBA_OPTS = {"cache": True, "fastmath": False}


def njit(fn):
    """``numba.njit`` with project options, or identity when numba is unavailable."""
    if _nb is None:
        return fn
    return _nb.njit(**NUMBA_OPTS)(fn)
