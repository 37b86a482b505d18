"""Kernel backend selection.

Two interchangeable implementations of the hot loops exist: ``_ckernels``
(Cython) and ``kernels_py`` (vectorized numpy). The compiled one is preferred
when importable; ``PPGSLEEP_BACKEND=python|compiled`` overrides, and
``use_backend`` swaps temporarily (used by the benchmark and the
cross-backend tests).
"""

import os
from contextlib import contextmanager

from . import kernels_py
from .errors import UsageError

_BACKENDS = {"python": kernels_py}

try:
    from . import _ckernels
    _BACKENDS["compiled"] = _ckernels
except ImportError:
    _ckernels = None


def available():
    """Names of importable backends."""
    return sorted(_BACKENDS)


def _initial():
    name = os.environ.get("PPGSLEEP_BACKEND", "").strip().lower()
    if name:
        if name not in _BACKENDS:
            raise UsageError(
                f"PPGSLEEP_BACKEND={name!r} not available (have: {available()})")
        return _BACKENDS[name]
    return _BACKENDS.get("compiled", kernels_py)


_active = _initial()


def active():
    return _active


def set_backend(name):
    global _active
    if name not in _BACKENDS:
        raise UsageError(f"unknown backend {name!r} (have: {available()})")
    _active = _BACKENDS[name]


@contextmanager
def use_backend(name):
    global _active
    prev = _active
    set_backend(name)
    try:
        yield _active
    finally:
        _active = prev
