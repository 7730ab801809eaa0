"""Kernel backend selection.

The compiled extension ``maskpoint._kernels`` is used when it imports;
otherwise the numpy twins in ``maskpoint._kernels_py`` are used. Setting
``MASKPOINT_PURE_PYTHON=1`` forces the numpy path.

All geometry kernels take C-contiguous float64 ``(n, 3)`` arrays and do no
argument validation; :mod:`maskpoint.geometry` is the checked public surface.
"""
import os

import numpy as np

from . import _kernels_py

_ext = None
if os.environ.get("MASKPOINT_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _ext
    except ImportError:  # extension not built
        _ext = None

BACKEND = "compiled" if _ext is not None else "python"
_impl = _ext if _ext is not None else _kernels_py


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def fps(pts, count, start):
    return _impl.fps(_f64(pts), int(count), int(start))


def knn(pts, centers, k):
    return _impl.knn(_f64(pts), _f64(centers), int(k))


def nearest_sq_dist(queries, pts):
    return _impl.nearest_sq_dist(_f64(queries), _f64(pts))


def min_pairwise_sq(pts):
    return float(_impl.min_pairwise_sq(_f64(pts)))


def row_matmul(x, w):
    """Row-stable ``x @ w`` for 2-D float32/float64 arrays of matching dtype."""
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    return _impl.row_matmul(x, w)
