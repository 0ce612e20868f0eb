"""Numba switch for the hot kernels.

Setting ``RBDG_DISABLE_NUMBA=1`` (or running without numba installed) makes
every kernel fall back to its pure-numpy implementation.
"""

import os

_FALSY = {"1", "true", "yes", "on"}

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

NUMBA_ENABLED = numba is not None and os.environ.get("RBDG_DISABLE_NUMBA", "").strip().lower() not in _FALSY


def njit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched when numba is unavailable."""
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def pick(nb_impl, np_impl):
    return nb_impl if NUMBA_ENABLED else np_impl
