"""Simulation kernel backend selection.

The compiled Cython kernel is used when available; the pure-NumPy fallback
otherwise.  Set HIERCOORD_FORCE_PYTHON=1 to force the fallback (mainly for
the backend benchmark and parity tests).
"""

import os

from . import pykernels
from .pykernels import KIND_BILINEAR, KIND_SQRT_FLOW, SPACE_STATE, SPACE_W, SPACE_Y

if os.environ.get("HIERCOORD_FORCE_PYTHON", "") == "1":
    _impl = pykernels
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = pykernels
        BACKEND = "python"

simulate = _impl.simulate

__all__ = [
    "BACKEND",
    "KIND_BILINEAR",
    "KIND_SQRT_FLOW",
    "SPACE_STATE",
    "SPACE_W",
    "SPACE_Y",
    "pykernels",
    "simulate",
]
