"""Synthetic four-class primitive dataset and training-time augmentation.

Surfaces are sampled in antipodal pairs (``p`` and ``-p``), which keeps each
marginal uniform and puts the raw centroid exactly at the origin, so
normalization of a jitter-free cloud is a pure rescale.
"""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from . import geometry
from .errors import InputError

SHAPES = ("sphere", "cube_surface", "torus", "cylinder")


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 512
    n_test: int = 128
    n_points: int = 256
    jitter: float = 0.01


def _sphere(n, rng, params):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _cube(n, rng, params):
    face = rng.integers(6, size=n)
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    axis = face // 2
    pts[np.arange(n), axis] = np.where(face % 2 == 0, -1.0, 1.0)
    return pts


def _torus(n, rng, params):
    major, minor = 1.0, params.get("minor", 0.35)
    out = np.empty((0, 3))
    while len(out) < n:
        m = 2 * (n - len(out)) + 16
        u = rng.uniform(0.0, 2 * np.pi, m)
        v = rng.uniform(0.0, 2 * np.pi, m)
        # area element is proportional to (major + minor cos v)
        keep = rng.uniform(0.0, major + minor, m) < major + minor * np.cos(v)
        u, v = u[keep], v[keep]
        ring = major + minor * np.cos(v)
        out = np.concatenate([out, np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], 1)])
    return out[:n]


def _cylinder(n, rng, params):
    h = params.get("half_height", 1.0)
    side_area = 2 * np.pi * 2 * h
    cap_area = 2 * np.pi
    on_side = rng.uniform(0.0, side_area + cap_area, n) < side_area
    theta = rng.uniform(0.0, 2 * np.pi, n)
    r = np.where(on_side, 1.0, np.sqrt(rng.uniform(0.0, 1.0, n)))
    z = np.where(on_side, rng.uniform(-h, h, n), np.where(rng.random(n) < 0.5, -h, h))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], 1)


_SAMPLERS = {"sphere": _sphere, "cube_surface": _cube, "torus": _torus, "cylinder": _cylinder}


def sample_surface(kind, n, rng, params=None):
    """``n`` i.i.d. points uniform on the surface of a unit-scale primitive."""
    if kind not in _SAMPLERS:
        raise InputError(f"unknown shape {kind!r}; expected one of {SHAPES}")
    return _SAMPLERS[kind](n, rng, params or {})


def gen_shape(kind, n_points, rng, jitter=0.0, randomize=False):
    """A normalized point cloud of one primitive.

    With ``randomize`` the primitive gets a random rotation and, for the
    torus and cylinder, random proportions.
    """
    if kind not in _SAMPLERS:
        raise InputError(f"unknown shape {kind!r}; expected one of {SHAPES}")
    if n_points < 8:
        raise InputError(f"n_points must be >= 8, got {n_points}")
    params = {}
    if randomize:
        params = {"minor": rng.uniform(0.2, 0.5), "half_height": rng.uniform(0.5, 1.5)}
    half = sample_surface(kind, (n_points + 1) // 2, rng, params)
    pts = np.concatenate([half, -half])[:n_points]
    if randomize:
        pts = Rotation.random(random_state=rng).apply(pts)
    if jitter > 0:
        pts = pts + rng.normal(0.0, jitter, size=pts.shape)
    return geometry.normalize_unit(pts)


def make_dataset(n, n_points, seed, jitter=0.01):
    """``n`` clouds with balanced labels in random order: ``(clouds (n, N, 3), labels (n,))``."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % len(SHAPES))
    clouds = np.stack([gen_shape(SHAPES[y], n_points, rng, jitter) for y in labels])
    return clouds, labels.astype(np.int64)


def augment(clouds, rng, scale=(0.8, 1.2), translate=0.1):
    """Per-cloud isotropic random scale and translation."""
    b = len(clouds)
    s = rng.uniform(scale[0], scale[1], size=(b, 1, 1))
    t = rng.uniform(-translate, translate, size=(b, 1, 3))
    return clouds * s + t
