"""Pure-numpy implementations of the hot kernels.

Each function mirrors the compiled version in ``_ckernels.pyx`` operation for
operation, so both backends return bitwise-identical results.
"""

from __future__ import annotations

import numpy as np


def laplacian_matvec(x: np.ndarray, nbr: np.ndarray) -> np.ndarray:
    """Apply the 6-neighbour negative Laplacian restricted to a voxel set.

    ``nbr`` has shape (6, n); an entry equal to ``n`` marks a neighbour outside
    the set, which contributes zero.
    """
    n = x.shape[0]
    xe = np.empty(n + 1, dtype=np.float64)
    xe[:n] = x
    xe[n] = 0.0
    y = 6.0 * xe[:n]
    for k in range(6):
        y -= xe[nbr[k]]
    return y


def box_sum3d(a: np.ndarray, radius: int) -> np.ndarray:
    """Sum over a (2r+1)^3 window clipped to the array bounds."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    out = np.array(a, dtype=np.float64, copy=True)
    for axis in range(3):
        out = _box_sum_axis(out, radius, axis)
    return out


def _box_sum_axis(a: np.ndarray, radius: int, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    n = a.shape[0]
    prefix = np.zeros((n + 1,) + a.shape[1:], dtype=np.float64)
    np.cumsum(a, axis=0, out=prefix[1:])
    idx = np.arange(n)
    hi = np.minimum(idx + radius, n - 1) + 1
    lo = np.maximum(idx - radius, 0)
    out = prefix[hi] - prefix[lo]
    return np.ascontiguousarray(np.moveaxis(out, 0, axis))
