# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the codec and the EMD metric.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature and the same floating-point operation order where it matters
(bin edges, midpoints). Array layout is ``(n, h, t)``: the bin axis is
axis 1 and a "column" is ``a[i, :, k]``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()

BACKEND = "cython"


cdef inline Py_ssize_t _bin(double s, Py_ssize_t h, double ms) noexcept nogil:
    cdef double r
    cdef Py_ssize_t j
    if s >= ms:
        return h - 1
    if s <= -ms:
        return 0
    r = h * (s + ms) / (2.0 * ms)
    j = <Py_ssize_t>floor(r)
    if j < 0:
        return 0
    if j > h - 1:
        return h - 1
    return j


cdef inline double _mid(Py_ssize_t j, Py_ssize_t h, double ms) noexcept nogil:
    return ms * <double>(2 * j + 1 - h) / <double>h


def bin_indices(values, Py_ssize_t h, double ms):
    """Zero-based bin index of every element of ``values``."""
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64).ravel()
    cdef Py_ssize_t n = v.shape[0], i
    out = np.empty(n, dtype=np.int64)
    cdef long long[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _bin(v[i], h, ms)
    return out.reshape(np.shape(values))


def encode(values, Py_ssize_t h, double ms):
    """One-hot tensor ``(c, h, t)`` of a ``(c, t)`` float array."""
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t c = v.shape[0], t = v.shape[1], i, k
    out = np.zeros((c, h, t), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] o = out
    with nogil:
        for i in range(c):
            for k in range(t):
                o[i, _bin(v[i, k], h, ms), k] = 1
    return out


def column_index(bits):
    """Index of the single 1 in each column, or -1 if the column is not one-hot."""
    cdef const cnp.uint8_t[:, :, ::1] b = np.ascontiguousarray(bits, dtype=np.uint8)
    cdef Py_ssize_t n = b.shape[0], h = b.shape[1], t = b.shape[2], i, j, k
    out = np.full((n, t), -1, dtype=np.int64)
    cdef long long[:, ::1] o = out
    cdef cnp.uint8_t x
    cdef long long seen
    cdef bint bad
    with nogil:
        for i in range(n):
            for k in range(t):
                seen = -1
                bad = False
                for j in range(h):
                    x = b[i, j, k]
                    if x == 0:
                        continue
                    if x != 1 or seen >= 0:
                        bad = True
                        break
                    seen = j
                o[i, k] = -1 if bad else seen
    return out


def argmax_columns(probs):
    """Per-column argmax over axis 1; ties resolve to the lowest index."""
    cdef const double[:, :, ::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], h = p.shape[1], t = p.shape[2], i, j, k, best
    out = np.empty((n, t), dtype=np.int64)
    cdef long long[:, ::1] o = out
    with nogil:
        for i in range(n):
            for k in range(t):
                best = 0
                for j in range(1, h):
                    if p[i, j, k] > p[i, best, k]:
                        best = j
                o[i, k] = best
    return out


def midpoints(idx, Py_ssize_t h, double ms):
    """Bin-centre value for an integer array of zero-based bin indices."""
    cdef const long long[::1] f = np.ascontiguousarray(idx, dtype=np.int64).ravel()
    cdef Py_ssize_t n = f.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _mid(f[i], h, ms)
    return out.reshape(np.shape(idx))


def roundtrip_abs_error(values, Py_ssize_t h, double ms):
    """``|decode(encode(s)) - s|`` elementwise, without building the tensor."""
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64).ravel()
    cdef Py_ssize_t n = v.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = fabs(_mid(_bin(v[i], h, ms), h, ms) - v[i])
    return out.reshape(np.shape(values))


def w1_columns(p, q):
    """Closed-form 1-D Wasserstein distance of every column pair, bin units."""
    cdef const double[:, :, ::1] a = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[:, :, ::1] b = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], h = a.shape[1], t = a.shape[2], i, j, k
    out = np.empty((n, t), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double cdf, acc
    with nogil:
        for i in range(n):
            for k in range(t):
                cdf = 0.0
                acc = 0.0
                for j in range(h - 1):
                    cdf = cdf + (a[i, j, k] - b[i, j, k])
                    acc = acc + fabs(cdf)
                o[i, k] = acc
    return out


def emd_loss_grad(p, q):
    """Summed column distances and their gradient with respect to ``p``.

    ``d/dp[l] = sum_{m >= l} sign(C_m)`` over the first ``h - 1`` CDF
    differences, with ``sign(0) = 0``.
    """
    cdef const double[:, :, ::1] a = np.ascontiguousarray(p, dtype=np.float64)
    cdef const double[:, :, ::1] b = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], h = a.shape[1], t = a.shape[2], i, j, k
    grad = np.zeros((n, h, t), dtype=np.float64)
    cdef double[:, :, ::1] g = grad
    per_col = np.empty((n, t), dtype=np.float64)
    cdef double[:, ::1] pc = per_col
    cdef double cdf, acc, s
    with nogil:
        for i in range(n):
            for k in range(t):
                cdf = 0.0
                acc = 0.0
                for j in range(h - 1):
                    cdf = cdf + (a[i, j, k] - b[i, j, k])
                    acc = acc + fabs(cdf)
                    # stash sign(C_j) in the gradient slot, suffix-summed below
                    g[i, j, k] = 1.0 if cdf > 0.0 else (-1.0 if cdf < 0.0 else 0.0)
                pc[i, k] = acc
                s = 0.0
                for j in range(h - 2, -1, -1):
                    s = s + g[i, j, k]
                    g[i, j, k] = s
    return per_col, grad
