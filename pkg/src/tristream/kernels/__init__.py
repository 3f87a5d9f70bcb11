"""Kernel backend selection.

Two interchangeable implementations of the convolution kernels exist:

* ``numba``  - jitted loops, the fast path (default when numba imports)
* ``numpy``  - im2col + BLAS fallback, always available

The environment variable ``TRISTREAM_KERNELS`` picks one at import time
(``auto``, ``numba`` or ``numpy``); ``set_backend`` overrides at runtime,
which the benchmark and the cross-checking tests use.
"""

import os

from ..errors import ConfigError
from . import numpy_backend

_BACKENDS = {"numpy": numpy_backend}

try:
    from . import numba_backend
    _BACKENDS["numba"] = numba_backend
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_backend = None

_active = None


def available_backends():
    return sorted(_BACKENDS)


def resolve(name: str):
    if name == "auto":
        return _BACKENDS.get("numba", numpy_backend)
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ConfigError(
            f"unknown kernel backend {name!r}; choose one of "
            f"{['auto'] + available_backends()}"
        ) from None


def set_backend(name: str):
    """Force the active backend; returns the backend module."""
    global _active
    _active = resolve(name)
    return _active


def active():
    """The backend module currently in use."""
    global _active
    if _active is None:
        _active = resolve(os.environ.get("TRISTREAM_KERNELS", "auto").strip().lower())
    return _active
