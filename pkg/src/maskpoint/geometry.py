"""Point-cloud geometry: boxes, normalization, sampling, neighbors, Chamfer.

A point cloud is an ``(N, 3)`` float64 array; row order is meaningful. All
distance comparisons are made on squared distances computed in float64, and
ties are broken toward the lower index.
"""
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DegenerateInputError, InputError


class AABB(NamedTuple):
    min: np.ndarray
    max: np.ndarray


def as_cloud(points, name="cloud", min_points=1):
    """Validate and convert ``points`` to a C-contiguous ``(N, 3)`` float64 array."""
    arr = np.ascontiguousarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InputError(f"{name} must have shape (N, 3), got {arr.shape}")
    if arr.shape[0] < min_points:
        raise InputError(f"{name} needs at least {min_points} point(s), got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite coordinates")
    return arr


def aabb(cloud):
    """Tightest axis-aligned box around ``cloud``."""
    cloud = as_cloud(cloud)
    return AABB(cloud.min(axis=0), cloud.max(axis=0))


def normalize_unit(cloud):
    """Center on the centroid and scale so the largest |coordinate| is 1."""
    cloud = as_cloud(cloud)
    centered = cloud - cloud.mean(axis=0)
    scale = np.abs(centered).max()
    if not scale > 0.0:
        raise DegenerateInputError("cannot normalize a cloud whose points all coincide")
    return centered / scale


def fps(cloud, count, start_index=0):
    """Farthest point sampling.

    Returns ``count`` distinct indices, starting with ``start_index``; each
    next index maximizes the minimum distance to those already chosen.
    """
    cloud = as_cloud(cloud)
    n = len(cloud)
    if not 1 <= count <= n:
        raise InputError(f"fps count must be in [1, {n}], got {count}")
    if not 0 <= start_index < n:
        raise InputError(f"fps start_index must be in [0, {n}), got {start_index}")
    return kernels.fps(cloud, count, start_index)


def knn(cloud, center, k):
    """Indices of the ``k`` points nearest ``center``, nearest first."""
    center = np.asarray(center, dtype=np.float64).reshape(1, 3)
    return knn_many(cloud, center, k)[0]


def knn_many(cloud, centers, k):
    """Row ``i`` holds the ``k`` nearest indices of ``centers[i]``."""
    cloud = as_cloud(cloud)
    centers = as_cloud(centers, "centers")
    if not 1 <= k <= len(cloud):
        raise InputError(f"k must be in [1, {len(cloud)}], got {k}")
    return kernels.knn(cloud, centers, k)


def nearest_distance(queries, cloud):
    """Euclidean distance from each query to its nearest point in ``cloud``."""
    queries = as_cloud(queries, "queries", min_points=0)
    cloud = as_cloud(cloud)
    if len(queries) == 0:
        return np.zeros(0)
    return np.sqrt(kernels.nearest_sq_dist(queries, cloud))


def chamfer_l2(a, b):
    """Symmetric squared-distance Chamfer distance.

    ``mean_a min_b |p - q|^2 + mean_b min_a |q - p|^2``
    """
    a = as_cloud(a, "a")
    b = as_cloud(b, "b")
    return float(kernels.nearest_sq_dist(a, b).mean() + kernels.nearest_sq_dist(b, a).mean())


def min_pairwise_distance(points):
    points = as_cloud(points, "points", min_points=2)
    return float(np.sqrt(kernels.min_pairwise_sq(points)))


def sample_uniform_in_aabb(box, n, rng):
    """``n`` points uniform in ``box``, one independent uniform per axis."""
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    lo = np.asarray(box.min, dtype=np.float64)
    hi = np.asarray(box.max, dtype=np.float64)
    u = rng.random((n, 3))
    return np.minimum(lo + u * (hi - lo), hi)
