"""Masked/visible partition of patch groups and real/fake occupancy queries."""
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import InputError

log = logging.getLogger(__name__)

FAKE_DRAW_CAP = 50  # max fake draws per requested fake query


@dataclass(frozen=True)
class MaskConfig:
    ratio: float = 0.9
    mode: str = "random"
    n_queries: int = 64
    gamma_fps_count: int = 0  # 0: use the patch count S; clamped to the cloud size

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise InputError(f"mask ratio must be in [0, 1), got {self.ratio}")
        if self.mode not in ("random", "block"):
            raise InputError(f"mask mode must be 'random' or 'block', got {self.mode!r}")
        if self.n_queries < 1:
            raise InputError(f"n_queries must be >= 1, got {self.n_queries}")
        if self.gamma_fps_count != 0 and self.gamma_fps_count < 2:
            raise InputError(f"gamma_fps_count must be 0 (use S) or >= 2, got {self.gamma_fps_count}")


@dataclass(frozen=True)
class MaskPartition:
    masked: np.ndarray
    unmasked: np.ndarray
    ratio: float


@dataclass(frozen=True)
class QuerySet:
    real_points: np.ndarray
    fake_points: np.ndarray
    gamma: float
    fake_draws: int = 0

    @property
    def fake_shortfall(self):
        """True when the draw cap ran out before every fake query was accepted."""
        return len(self.fake_points) < len(self.real_points)


def n_masked(n_groups, ratio):
    """``round(n_groups * ratio)`` with halves rounded up."""
    # the epsilon absorbs float error in products like 0.7 * 5 == 3.4999999999999996
    return int(math.floor(n_groups * ratio + 0.5 + 1e-9))


def _check_counts(n_groups, ratio):
    if n_groups < 2:
        raise InputError(f"need at least 2 patch groups, got {n_groups}")
    if not 0.0 <= ratio < 1.0:
        raise InputError(f"mask ratio must be in [0, 1), got {ratio}")
    n = n_masked(n_groups, ratio)
    if n > n_groups - 1:
        raise InputError(f"ratio {ratio} masks all {n_groups} groups; at least one must stay visible")
    return n


def random_mask(n_groups, ratio, rng):
    n = _check_counts(n_groups, ratio)
    order = rng.permutation(n_groups)
    return MaskPartition(np.sort(order[:n]), np.sort(order[n:]), ratio)


def block_mask(centers, ratio, rng):
    """Mask the ``round(S*ratio)`` centers nearest a uniformly chosen seed center."""
    centers = geometry.as_cloud(centers, "centers")
    n_groups = len(centers)
    n = _check_counts(n_groups, ratio)
    seed = int(rng.integers(n_groups))
    if n == 0:
        masked = np.zeros(0, dtype=np.int64)
    else:
        masked = np.sort(geometry.knn(centers, centers[seed], n))
    unmasked = np.setdiff1d(np.arange(n_groups), masked)
    return MaskPartition(masked, unmasked, ratio)


def make_mask(cfg, centers, rng):
    if cfg.mode == "block":
        return block_mask(centers, cfg.ratio, rng)
    return random_mask(len(centers), cfg.ratio, rng)


def compute_gamma(cloud, gamma_fps_count):
    """Discard radius: min pairwise distance among ``gamma_fps_count`` FPS points."""
    if gamma_fps_count < 2:
        raise InputError(f"gamma_fps_count must be >= 2, got {gamma_fps_count}")
    cloud = geometry.as_cloud(cloud)
    idx = geometry.fps(cloud, gamma_fps_count, 0)
    return geometry.min_pairwise_distance(cloud[idx])


def sample_queries(cloud, masked_points, n_q, gamma, rng, box=None):
    """Draw ``n_q`` real queries from ``masked_points`` and up to ``n_q`` fakes.

    Fakes are uniform in ``box`` (default: the cloud's bounding box). Any fake
    closer than ``gamma`` to a point of ``cloud`` is rejected and redrawn,
    for at most ``FAKE_DRAW_CAP * n_q`` draws in total.
    """
    cloud = geometry.as_cloud(cloud)
    masked_points = geometry.as_cloud(masked_points, "masked_points")
    if n_q < 1:
        raise InputError(f"n_q must be >= 1, got {n_q}")
    if gamma < 0:
        raise InputError(f"gamma must be >= 0, got {gamma}")
    replace = len(masked_points) < n_q
    real = masked_points[rng.choice(len(masked_points), size=n_q, replace=replace)]

    box = geometry.aabb(cloud) if box is None else box
    cap = FAKE_DRAW_CAP * n_q
    accepted = []
    n_accepted = 0
    draws = 0  # candidates examined, in draw order
    rate = 1.0
    while n_accepted < n_q and draws < cap:
        need = n_q - n_accepted
        batch = min(cap - draws, int(math.ceil(1.25 * need / max(rate, 0.02))) + 8)
        cand = geometry.sample_uniform_in_aabb(box, batch, rng)
        keep = geometry.nearest_distance(cand, cloud) >= gamma if gamma > 0 else np.ones(batch, bool)
        hits = np.cumsum(keep)
        if hits[-1] >= need:
            # stop at the candidate that completes the set; the rest are unused
            examined = int(np.searchsorted(hits, need)) + 1
        else:
            examined = batch
        keep[examined:] = False
        accepted.append(cand[keep])
        n_accepted += int(keep.sum())
        draws += examined
        rate = max(n_accepted, 1) / draws
    fake = np.concatenate(accepted) if accepted else np.zeros((0, 3))
    if len(fake) == 0:
        log.warning("no fake query survived gamma=%.4g after %d draws", gamma, draws)
    return QuerySet(real, fake, float(gamma), draws)
