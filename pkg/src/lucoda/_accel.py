"""Numba switch for the hot kernels.

Set ``LUCODA_DISABLE_NUMBA=1`` in the environment before import to force the
pure-numpy code paths (useful for debugging and for the benchmark).
"""
import os

_flag = os.environ.get("LUCODA_DISABLE_NUMBA", "0").strip().lower()

try:  # pragma: no cover - import guard
    import numba as _nb
except ImportError:  # pragma: no cover
    _nb = None

USE_NUMBA = _nb is not None and _flag not in ("1", "true", "yes")


def njit(fn=None, **kwargs):
    """``numba.njit`` when acceleration is enabled, identity otherwise."""
    kwargs.setdefault("cache", True)

    def wrap(f):
        return _nb.njit(**kwargs)(f) if USE_NUMBA else f

    return wrap if fn is None else wrap(fn)
