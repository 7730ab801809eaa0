# cython: language_level=3
"""Compiled point-cloud kernels.

Every routine here has a numpy twin in ``_kernels_py`` that produces
identical integer results and identical float64 distances: squared
distances are always accumulated as ``dx*dx + dy*dy + dz*dz`` in that order.
"""
import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemv, sgemv

cnp.import_array()

ctypedef fused real_t:
    float
    double


cdef inline double _sqdist(const double[:, ::1] a, Py_ssize_t i,
                           const double[:, ::1] b, Py_ssize_t j) noexcept nogil:
    cdef double dx = a[i, 0] - b[j, 0]
    cdef double dy = a[i, 1] - b[j, 1]
    cdef double dz = a[i, 2] - b[j, 2]
    return dx * dx + dy * dy + dz * dz


def fps(const double[:, ::1] pts, Py_ssize_t count, Py_ssize_t start):
    cdef Py_ssize_t n = pts.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(count, dtype=np.int64)
    cdef double[::1] mind = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i, j, best
    cdef double d, bestd
    with nogil:
        for j in range(n):
            mind[j] = _sqdist(pts, j, pts, start)
        mind[start] = -1.0
        out[0] = start
        for i in range(1, count):
            best = -1
            bestd = -1.0
            for j in range(n):
                if mind[j] > bestd:
                    bestd = mind[j]
                    best = j
            out[i] = best
            mind[best] = -1.0
            for j in range(n):
                if mind[j] >= 0.0:
                    d = _sqdist(pts, j, pts, best)
                    if d < mind[j]:
                        mind[j] = d
    return out


def knn(const double[:, ::1] pts, const double[:, ::1] centers, Py_ssize_t k):
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t c = centers.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty((c, k), dtype=np.int64)
    cdef double[::1] topd = np.empty(k, dtype=np.float64)
    cdef Py_ssize_t[::1] topi = np.empty(k, dtype=np.intp)
    cdef Py_ssize_t ci, j, filled, pos
    cdef double d
    with nogil:
        for ci in range(c):
            filled = 0
            for j in range(n):
                d = _sqdist(pts, j, centers, ci)
                if filled == k and not d < topd[k - 1]:
                    continue
                # stable insertion: equal distances keep the lower index first
                pos = filled if filled < k else k - 1
                while pos > 0 and topd[pos - 1] > d:
                    if pos < k:
                        topd[pos] = topd[pos - 1]
                        topi[pos] = topi[pos - 1]
                    pos -= 1
                topd[pos] = d
                topi[pos] = j
                if filled < k:
                    filled += 1
            for j in range(k):
                out[ci, j] = topi[j]
    return out


def nearest_sq_dist(const double[:, ::1] queries, const double[:, ::1] pts):
    cdef Py_ssize_t q = queries.shape[0]
    cdef Py_ssize_t n = pts.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(q, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double d, best
    with nogil:
        for i in range(q):
            best = _sqdist(queries, i, pts, 0)
            for j in range(1, n):
                d = _sqdist(queries, i, pts, j)
                if d < best:
                    best = d
            out[i] = best
    return out


def min_pairwise_sq(const double[:, ::1] pts):
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t i, j
    cdef double d
    cdef double best = _sqdist(pts, 0, pts, 1)
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                d = _sqdist(pts, i, pts, j)
                if d < best:
                    best = d
    return best


def row_matmul(const real_t[:, ::1] x, const real_t[:, ::1] w):
    """``x @ w`` with one gemv per row, so each row's value ignores the others."""
    cdef int rows = <int>x.shape[0]
    cdef int kdim = <int>x.shape[1]
    cdef int edim = <int>w.shape[1]
    dtype = np.float32 if real_t is float else np.float64
    out = np.zeros((rows, edim), dtype=dtype)
    cdef real_t[:, ::1] o = out
    cdef char trans = b'N'
    cdef int inc = 1
    cdef real_t alpha = 1.0
    cdef real_t beta = 0.0
    cdef int r
    if rows == 0 or edim == 0 or kdim == 0:
        return out
    with nogil:
        for r in range(rows):
            # w is C-ordered (kdim, edim) == Fortran (edim, kdim) with lda = edim
            if real_t is float:
                sgemv(&trans, &edim, &kdim, &alpha, <float*>&w[0, 0], &edim,
                      <float*>&x[r, 0], &inc, &beta, &o[r, 0], &inc)
            else:
                dgemv(&trans, &edim, &kdim, &alpha, <double*>&w[0, 0], &edim,
                      <double*>&x[r, 0], &inc, &beta, &o[r, 0], &inc)
    return out
