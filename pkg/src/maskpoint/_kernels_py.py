"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Results match the compiled kernels exactly for the geometry routines.
``row_matmul`` matches only up to rounding, but both versions are row-stable.
"""
import numpy as np

_CHUNK = 1 << 20  # max elements in one broadcast distance block


def _sqdist_to(pts, p):
    dx = pts[:, 0] - p[0]
    dy = pts[:, 1] - p[1]
    dz = pts[:, 2] - p[2]
    return dx * dx + dy * dy + dz * dz


def _sqdist_block(a, b):
    dx = a[:, None, 0] - b[None, :, 0]
    dy = a[:, None, 1] - b[None, :, 1]
    dz = a[:, None, 2] - b[None, :, 2]
    return dx * dx + dy * dy + dz * dz


def fps(pts, count, start):
    out = np.empty(count, dtype=np.int64)
    mind = _sqdist_to(pts, pts[start])
    mind[start] = -1.0
    out[0] = start
    for i in range(1, count):
        best = int(np.argmax(mind))
        out[i] = best
        mind[best] = -1.0
        live = mind >= 0.0
        mind[live] = np.minimum(mind[live], _sqdist_to(pts[live], pts[best]))
    return out


def knn(pts, centers, k):
    d2 = _sqdist_block(centers, pts)
    return np.argsort(d2, axis=1, kind="stable")[:, :k].astype(np.int64)


def nearest_sq_dist(queries, pts):
    step = max(1, _CHUNK // max(1, len(pts)))
    out = np.empty(len(queries), dtype=np.float64)
    for lo in range(0, len(queries), step):
        out[lo:lo + step] = _sqdist_block(queries[lo:lo + step], pts).min(axis=1)
    return out


def min_pairwise_sq(pts):
    best = np.inf
    for i in range(len(pts) - 1):
        best = min(best, float(_sqdist_to(pts[i + 1:], pts[i]).min()))
    return best


def row_matmul(x, w):
    if x.shape[0] == 0:
        return np.zeros((0, w.shape[1]), dtype=x.dtype)
    # one (1, K) @ (K, E) product per row; BLAS then never blocks across rows
    return np.matmul(x[:, None, :], w)[:, 0, :]
