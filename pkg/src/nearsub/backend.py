"""Kernel backend selection.

The distance kernels exist twice: a numba @njit implementation and a pure
numpy implementation with identical semantics. The env variable
``NEARSUB_BACKEND`` picks one: ``numba``, ``numpy``, or ``auto`` (default:
numba when importable, numpy otherwise). Both backends compute squared
distances on float32 inputs with float64 accumulation.
"""

from __future__ import annotations

import os

from .errors import ConfigError

ENV_VAR = "NEARSUB_BACKEND"

_numba_available: bool | None = None


def numba_available() -> bool:
    global _numba_available
    if _numba_available is None:
        try:
            import numba  # noqa: F401

            _numba_available = True
        except ImportError:
            _numba_available = False
    return _numba_available


def active_backend() -> str:
    """Resolve the backend name from the environment ('numba' or 'numpy')."""
    choice = os.environ.get(ENV_VAR, "auto").strip().lower()
    if choice in ("", "auto"):
        return "numba" if numba_available() else "numpy"
    if choice == "numba":
        if not numba_available():
            raise ConfigError(f"{ENV_VAR}=numba but numba is not importable")
        return "numba"
    if choice == "numpy":
        return "numpy"
    raise ConfigError(f"{ENV_VAR}={choice!r} is not one of auto|numba|numpy")


def get_kernels(backend: str | None = None):
    """The kernel module for ``backend`` (default: the active backend)."""
    name = backend if backend is not None else active_backend()
    if name == "numba":
        from . import _kernels_numba

        return _kernels_numba
    if name == "numpy":
        from . import _kernels_numpy

        return _kernels_numpy
    raise ConfigError(f"unknown backend {name!r}")
