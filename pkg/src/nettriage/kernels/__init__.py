"""Kernel backend selection.

The compiled extension is used when importable; otherwise the NumPy
fallback takes over.  ``NETTRIAGE_BACKEND=numpy|native`` forces a choice
at import time, and :func:`set_backend` switches at runtime (used by the
equivalence tests and the benchmark).
"""

import os

from . import numpy_backend

try:
    from . import _native
except ImportError:
    _native = None

_BACKENDS = {"numpy": numpy_backend}
if _native is not None:
    _BACKENDS["native"] = _native

_forced = os.environ.get("NETTRIAGE_BACKEND")
if _forced is not None and _forced not in _BACKENDS:
    raise ImportError(
        f"NETTRIAGE_BACKEND={_forced!r} requested but only "
        f"{sorted(_BACKENDS)} available"
    )

_active = _BACKENDS[_forced or ("native" if _native is not None else "numpy")]


def backend_name():
    for name, mod in _BACKENDS.items():
        if mod is _active:
            return name
    raise AssertionError("active backend not registered")


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; have {sorted(_BACKENDS)}")
    _active = _BACKENDS[name]


def im2col3x3(x):
    return _active.im2col3x3(x)


def col2im3x3(cols, n, h, w, c):
    return _active.col2im3x3(cols, n, h, w, c)


def maxpool2x2_forward(x):
    return _active.maxpool2x2_forward(x)


def maxpool2x2_backward(dy, idx, h, w):
    return _active.maxpool2x2_backward(dy, idx, h, w)
