"""Numba switch.

Set ``IPMPLAN_NUMBA=0`` to run every kernel through its pure numpy/Python
path. Both paths are kept numerically identical and are cross-checked in
the test suite.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("IPMPLAN_NUMBA", "1") != "0"


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, identity decorator otherwise."""
    if numba is not None:
        return numba.njit(*args, **kwargs)

    def wrapper(f):  # pragma: no cover
        return f

    if len(args) == 1 and callable(args[0]) and not kwargs:  # pragma: no cover
        return args[0]
    return wrapper  # pragma: no cover


def pick(fast, slow):
    """Choose the compiled kernel or its fallback according to the flag."""
    return fast if USE_NUMBA else slow
