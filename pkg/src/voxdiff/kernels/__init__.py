"""Hot numeric kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built and ``VOXDIFF_PURE_PYTHON``
is unset or ``0``. ``BACKEND`` names the active implementation.
"""

from __future__ import annotations

import os

from . import _pykernels

_force_python = os.environ.get("VOXDIFF_PURE_PYTHON", "0") not in ("", "0")

try:
    if _force_python:
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

laplacian_matvec = _impl.laplacian_matvec
box_sum3d = _impl.box_sum3d

__all__ = ["BACKEND", "box_sum3d", "laplacian_matvec"]
