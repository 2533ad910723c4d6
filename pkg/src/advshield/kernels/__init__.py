"""Hot convolution-lowering kernels with selectable backends.

Two interchangeable implementations of the same two primitives:

* ``jit`` — numba ``@njit`` loops (default when numba imports cleanly)
* ``reference`` — pure numpy stride tricks

The env var ``ADVSHIELD_KERNELS`` picks one at import time (``numba``,
``numpy``, or ``auto``); ``use_backend()`` switches at runtime, which the
tests and ``benchmarks/bench_kernels.py`` rely on.  Both backends produce
the same values up to float summation order.
"""

import logging
import os

from . import reference

logger = logging.getLogger(__name__)

try:
    from . import jit as _jit
except ImportError:  # numba missing or broken: numpy fallback still works
    _jit = None

_BACKENDS = {"numpy": reference}
if _jit is not None:
    _BACKENDS["numba"] = _jit

_active_name = None
_active = None


def available_backends():
    return sorted(_BACKENDS)


def use_backend(name):
    """Select the kernel backend by name ('numba', 'numpy', or 'auto')."""
    global _active_name, _active
    if name == "auto":
        name = "numba" if "numba" in _BACKENDS else "numpy"
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}")
    _active_name = name
    _active = _BACKENDS[name]
    return name


def active_backend():
    return _active_name


def im2col(xp, k, stride, out_h, out_w):
    return _active.im2col(xp, k, stride, out_h, out_w)


def col2im_add(cols, n, c, hp, wp, k, stride, out_h, out_w):
    return _active.col2im_add(cols, n, c, hp, wp, k, stride, out_h, out_w)


_requested = os.environ.get("ADVSHIELD_KERNELS", "auto").strip().lower() or "auto"
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"ADVSHIELD_KERNELS must be auto|numba|numpy, got {_requested!r}")
if _requested == "numba" and "numba" not in _BACKENDS:
    raise ImportError("ADVSHIELD_KERNELS=numba but numba is not importable")
if _requested == "auto" and "numba" not in _BACKENDS:
    logger.warning("numba unavailable; falling back to pure-numpy kernels")
use_backend(_requested)
