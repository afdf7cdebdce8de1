"""Numba switch for the hot kernels.

Set ``HSM_NUMBA=0`` in the environment to run every kernel as plain
Python/NumPy. Compiled dispatchers keep the original function on
``.py_func``, which the benchmark uses to time both paths in one process.
"""
import os

_flag = os.environ.get("HSM_NUMBA", "1").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA = _numba is not None and _flag not in ("0", "false", "no", "off")

numba_default = {
    "nopython": True,
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
}


def jit(func):
    """Compile ``func`` with numba when enabled, otherwise return it as is."""
    if USE_NUMBA:
        return _numba.jit(**numba_default)(func)
    return func


def python_impl(func):
    """The uncompiled implementation behind ``func``."""
    return getattr(func, "py_func", func)
