"""Kernel backend selection.

Hot loops exist twice: an explicit-loop version compiled with numba and a
vectorized numpy version. ``QFILTER_BACKEND=numpy`` (or a missing numba)
selects the numpy path at import time; :func:`set_backend` switches at run
time.
"""
from __future__ import annotations

import os
from contextlib import contextmanager

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

BACKENDS = ("numba", "numpy")

HAVE_NUMBA = numba is not None


def _initial_backend() -> str:
    name = os.environ.get("QFILTER_BACKEND", "numba").strip().lower()
    if name not in BACKENDS:
        raise ValueError(f"QFILTER_BACKEND must be one of {BACKENDS}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name


_active = _initial_backend()


def get_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    _active = name


@contextmanager
def backend(name: str):
    """Temporarily switch the kernel backend."""
    previous = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def jit(func):
    """``numba.njit`` with caching and the GIL released; identity without numba."""
    if numba is None:
        return func
    return numba.njit(cache=True, nogil=True)(func)
