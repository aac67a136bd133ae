# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics match ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def laplacian_matvec(const double[::1] x, const cnp.int64_t[:, ::1] nbr):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, k
    cdef cnp.int64_t j
    cdef double acc
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] y = out
    with nogil:
        for i in range(n):
            acc = 6.0 * x[i]
            for k in range(6):
                j = nbr[k, i]
                if j < n:
                    acc = acc - x[j]
                else:
                    acc = acc - 0.0
            y[i] = acc
    return out


cdef void _axis_pass(double[:, :, ::1] src, double[:, :, ::1] dst, int axis, Py_ssize_t r,
                     double[::1] prefix) noexcept nogil:
    cdef Py_ssize_t nx = src.shape[0], ny = src.shape[1], nz = src.shape[2]
    cdef Py_ssize_t n, i, u, v, lo, hi
    cdef Py_ssize_t nu, nv
    cdef double s
    if axis == 0:
        n = nx; nu = ny; nv = nz
    elif axis == 1:
        n = ny; nu = nx; nv = nz
    else:
        n = nz; nu = nx; nv = ny
    for u in range(nu):
        for v in range(nv):
            prefix[0] = 0.0
            s = 0.0
            for i in range(n):
                if axis == 0:
                    s = s + src[i, u, v]
                elif axis == 1:
                    s = s + src[u, i, v]
                else:
                    s = s + src[u, v, i]
                prefix[i + 1] = s
            for i in range(n):
                hi = i + r
                if hi > n - 1:
                    hi = n - 1
                hi = hi + 1
                lo = i - r
                if lo < 0:
                    lo = 0
                if axis == 0:
                    dst[i, u, v] = prefix[hi] - prefix[lo]
                elif axis == 1:
                    dst[u, i, v] = prefix[hi] - prefix[lo]
                else:
                    dst[u, v, i] = prefix[hi] - prefix[lo]


def box_sum3d(a, int radius):
    if radius < 0:
        raise ValueError("radius must be non-negative")
    cdef double[:, :, ::1] src = np.ascontiguousarray(a, dtype=np.float64).copy()
    cdef double[:, :, ::1] tmp = np.empty_like(np.asarray(src))
    cdef Py_ssize_t longest = max(src.shape[0], src.shape[1], src.shape[2])
    cdef double[::1] prefix = np.empty(longest + 1, dtype=np.float64)
    with nogil:
        _axis_pass(src, tmp, 0, radius, prefix)
        _axis_pass(tmp, src, 1, radius, prefix)
        _axis_pass(src, tmp, 2, radius, prefix)
    return np.asarray(tmp)
