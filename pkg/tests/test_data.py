import numpy as np
import pytest

from maskpoint import data
from maskpoint.errors import InputError


class TestShapes:
    def test_sphere_norms_constant(self, rng):
        pts = data.gen_shape("sphere", 256, rng, jitter=0.0)
        r = np.linalg.norm(pts, axis=1)
        assert r.max() - r.min() <= 1e-6

    def test_cube_points_on_a_face(self, rng):
        pts = data.gen_shape("cube_surface", 256, rng, jitter=0.0)
        extreme = np.abs(pts).max()
        assert np.all(np.isclose(np.abs(pts), extreme, rtol=0, atol=1e-12).any(axis=1))

    def test_sphere_sampler_mean(self):
        pts = data.sample_surface("sphere", 100_000, np.random.default_rng(0))
        assert np.all(np.abs(pts.mean(axis=0)) <= 0.02)

    @pytest.mark.parametrize("kind", data.SHAPES)
    def test_normalized(self, kind, rng):
        pts = data.gen_shape(kind, 257, rng, jitter=0.01)
        assert pts.shape == (257, 3)
        assert np.abs(pts).max() == pytest.approx(1.0) and np.allclose(pts.mean(axis=0), 0, atol=1e-12)

    def test_torus_on_surface(self, rng):
        pts = data.sample_surface("torus", 500, rng)
        ring = np.hypot(pts[:, 0], pts[:, 1])
        np.testing.assert_allclose(np.hypot(ring - 1.0, pts[:, 2]), 0.35, atol=1e-12)

    def test_cylinder_on_surface(self, rng):
        pts = data.sample_surface("cylinder", 500, rng)
        r = np.hypot(pts[:, 0], pts[:, 1])
        on_side = np.isclose(r, 1.0, atol=1e-12)
        on_cap = np.isclose(np.abs(pts[:, 2]), 1.0, atol=1e-12) & (r <= 1.0 + 1e-12)
        assert np.all(on_side | on_cap) and on_side.any() and on_cap.any()

    def test_randomized_variant_rotates(self, rng):
        pts = data.gen_shape("cube_surface", 256, rng, jitter=0.0, randomize=True)
        assert not np.isclose(np.abs(pts), np.abs(pts).max(), atol=1e-9).any(axis=1).all()

    def test_unknown(self, rng):
        with pytest.raises(InputError):
            data.gen_shape("cone", 64, rng)

    def test_too_few_points(self, rng):
        with pytest.raises(InputError):
            data.gen_shape("sphere", 4, rng)


class TestDataset:
    def test_balanced_and_deterministic(self):
        x1, y1 = data.make_dataset(40, 64, seed=3)
        x2, y2 = data.make_dataset(40, 64, seed=3)
        assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
        assert np.bincount(y1).tolist() == [10, 10, 10, 10]

    def test_augment(self, rng):
        clouds = np.stack([data.gen_shape("sphere", 64, rng) for _ in range(8)])
        out = data.augment(clouds, rng)
        centered = out - out.mean(axis=1, keepdims=True)
        scale = np.abs(centered).max(axis=(1, 2))
        assert np.all((scale >= 0.8 - 1e-12) & (scale <= 1.2 + 1e-12))
        assert np.all(np.abs(out.mean(axis=1)) <= 0.1 + 1e-12)
