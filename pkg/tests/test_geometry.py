import os
import subprocess
import sys

import numpy as np
import pytest

from maskpoint import geometry, kernels
from maskpoint.errors import DegenerateInputError, InputError

from . import oracles

KINDS = ("normal", "grid", "dup")


class TestAABB:
    def test_single_point(self):
        box = geometry.aabb([[0.0, 0.0, 0.0]])
        assert np.array_equal(box.min, [0, 0, 0]) and np.array_equal(box.max, [0, 0, 0])

    def test_componentwise(self):
        box = geometry.aabb([[-1, 2, 0], [3, -4, 5]])
        assert np.array_equal(box.min, [-1, -4, 0])
        assert np.array_equal(box.max, [3, 2, 5])

    def test_duplication_idempotent(self, rng):
        c = rng.standard_normal((20, 3))
        a, b = geometry.aabb(c), geometry.aabb(np.concatenate([c, c]))
        assert np.array_equal(a.min, b.min) and np.array_equal(a.max, b.max)

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            geometry.aabb(np.zeros((0, 3)))


class TestNormalize:
    def test_two_points(self):
        out = geometry.normalize_unit([[0, 0, 0], [2, 0, 0]])
        assert np.array_equal(out, [[-1, 0, 0], [1, 0, 0]])

    def test_fixed_point(self):
        c = np.array([[-1.0, 0.5, 0.0], [1.0, -0.5, 0.0]])
        assert np.array_equal(geometry.normalize_unit(c), c)

    def test_idempotent(self, rng):
        once = geometry.normalize_unit(rng.standard_normal((50, 3)) * 3 + 1)
        np.testing.assert_allclose(geometry.normalize_unit(once), once, atol=1e-15)
        assert np.abs(once).max() == 1.0

    def test_degenerate(self):
        with pytest.raises(DegenerateInputError):
            geometry.normalize_unit(np.ones((4, 3)))


class TestFPS:
    def test_seed_only(self, rng):
        assert list(geometry.fps(rng.standard_normal((5, 3)), 1, 0)) == [0]

    def test_collinear_hand_example(self):
        c = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [10, 0, 0]], dtype=float)
        assert list(geometry.fps(c, 3, 0)) == [0, 3, 2]

    def test_full_count_is_permutation(self, rng):
        idx = geometry.fps(rng.standard_normal((17, 3)), 17, 4)
        assert sorted(idx) == list(range(17)) and idx[0] == 4

    def test_prefix_property(self, rng):
        c = rng.standard_normal((40, 3))
        assert list(geometry.fps(c, 30, 3)[:10]) == list(geometry.fps(c, 10, 3))

    @pytest.mark.parametrize("count,start", [(0, 0), (6, 0), (2, 5), (2, -1)])
    def test_bad_arguments(self, count, start):
        with pytest.raises(InputError):
            geometry.fps(np.zeros((5, 3)) + np.arange(5)[:, None], count, start)

    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_oracle(self, kind):
        rng = np.random.default_rng(7)
        for _ in range(40):
            n = int(rng.integers(2, 65))
            c = oracles.random_cloud(rng, n, kind)
            count, start = int(rng.integers(1, n + 1)), int(rng.integers(n))
            assert list(geometry.fps(c, count, start)) == oracles.fps(c, count, start)


class TestKNN:
    def test_hand_example(self):
        c = [[1, 0, 0], [0, 2, 0], [0, 0, 3]]
        assert list(geometry.knn(c, [0, 0, 0], 2)) == [0, 1]

    def test_exhaustive_sorted(self, rng):
        c = rng.standard_normal((12, 3))
        idx = geometry.knn(c, [0, 0, 0], 12)
        d = np.sum(c[idx] ** 2, axis=1)
        assert sorted(idx) == list(range(12)) and np.all(np.diff(d) >= 0)

    def test_center_on_point(self, rng):
        c = rng.standard_normal((9, 3))
        assert geometry.knn(c, c[6], 1)[0] == 6

    @pytest.mark.parametrize("k", [0, 4])
    def test_bad_k(self, k):
        with pytest.raises(InputError):
            geometry.knn(np.eye(3), [0, 0, 0], k)

    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_oracle(self, kind):
        rng = np.random.default_rng(11)
        for _ in range(40):
            n = int(rng.integers(1, 65))
            c = oracles.random_cloud(rng, n, kind)
            center = c[rng.integers(n)] if rng.random() < 0.5 else rng.integers(-2, 3, 3).astype(float)
            k = int(rng.integers(1, n + 1))
            assert list(geometry.knn(c, center, k)) == oracles.knn(c, center, k)


class TestChamfer:
    def test_identical_zero(self, rng):
        c = rng.standard_normal((30, 3))
        assert geometry.chamfer_l2(c, c) == 0.0

    def test_hand_values(self):
        assert geometry.chamfer_l2([[0, 0, 0]], [[1, 0, 0]]) == 2.0
        assert geometry.chamfer_l2([[0, 0, 0], [1, 0, 0]], [[0, 0, 0]]) == 0.5

    def test_symmetric_and_matches_oracle(self, rng):
        for _ in range(20):
            a = rng.standard_normal((int(rng.integers(1, 30)), 3))
            b = rng.standard_normal((int(rng.integers(1, 30)), 3))
            ab = geometry.chamfer_l2(a, b)
            assert ab == geometry.chamfer_l2(b, a)
            assert ab == pytest.approx(oracles.chamfer(a, b), rel=1e-12)

    def test_independent_samplings_of_sphere_differ(self):
        rng = np.random.default_rng(3)

        def sphere():
            v = rng.standard_normal((256, 3))
            return v / np.linalg.norm(v, axis=1, keepdims=True)

        a, b = sphere(), sphere()
        cd = geometry.chamfer_l2(a, b)
        assert cd > 0 and cd == pytest.approx(oracles.chamfer(a, b), rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            geometry.chamfer_l2(np.zeros((0, 3)), np.zeros((1, 3)))


class TestMinPairwise:
    def test_square(self):
        assert geometry.min_pairwise_distance([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]) == 1.0

    def test_triangle(self):
        assert geometry.min_pairwise_distance([[0, 0, 0], [3, 0, 0], [3, 4, 0]]) == 3.0

    def test_duplicate_is_zero(self, rng):
        c = rng.standard_normal((10, 3))
        c[7] = c[2]
        assert geometry.min_pairwise_distance(c) == 0.0

    def test_needs_two(self):
        with pytest.raises(InputError):
            geometry.min_pairwise_distance([[0, 0, 0]])

    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_oracle(self, kind):
        rng = np.random.default_rng(5)
        for _ in range(40):
            c = oracles.random_cloud(rng, int(rng.integers(2, 65)), kind)
            assert geometry.min_pairwise_distance(c) == oracles.min_pairwise(c)


class TestNearest:
    def test_matches_oracle(self, rng):
        c = rng.standard_normal((40, 3))
        q = rng.standard_normal((25, 3))
        expect = [oracles.nearest(p, c) for p in q]
        assert np.array_equal(geometry.nearest_distance(q, c), expect)

    def test_no_queries(self, rng):
        assert geometry.nearest_distance(np.zeros((0, 3)), rng.standard_normal((3, 3))).shape == (0,)


class TestUniformSampling:
    def test_degenerate_box(self, rng):
        box = geometry.AABB(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]))
        assert np.all(geometry.sample_uniform_in_aabb(box, 10, rng) == [1, 2, 3])

    def test_inside_box(self, rng):
        box = geometry.AABB(np.array([-1.0, 0.0, 2.0]), np.array([1.0, 0.5, 7.0]))
        pts = geometry.sample_uniform_in_aabb(box, 5000, rng)
        assert np.all(pts >= box.min) and np.all(pts <= box.max)

    def test_mean(self, rng):
        box = geometry.AABB(np.zeros(3), np.ones(3))
        mean = geometry.sample_uniform_in_aabb(box, 100_000, rng).mean(axis=0)
        assert np.all(np.abs(mean - 0.5) <= 0.01)

    def test_deterministic(self):
        box = geometry.AABB(np.zeros(3), np.ones(3))
        a = geometry.sample_uniform_in_aabb(box, 50, np.random.default_rng(9))
        b = geometry.sample_uniform_in_aabb(box, 50, np.random.default_rng(9))
        assert np.array_equal(a, b)


class TestBackends:
    """The compiled kernels and the numpy fallback must agree bit for bit."""

    @pytest.fixture(autouse=True)
    def _needs_ext(self):
        pytest.importorskip("maskpoint._kernels")

    @pytest.mark.parametrize("kind", KINDS)
    def test_geometry_kernels_identical(self, kind):
        from maskpoint import _kernels, _kernels_py
        rng = np.random.default_rng(21)
        for _ in range(30):
            n = int(rng.integers(2, 80))
            c = np.ascontiguousarray(oracles.random_cloud(rng, n, kind))
            q = np.ascontiguousarray(rng.standard_normal((int(rng.integers(1, 20)), 3)))
            k = int(rng.integers(1, n + 1))
            assert np.array_equal(_kernels.fps(c, k, 0), _kernels_py.fps(c, k, 0))
            assert np.array_equal(_kernels.knn(c, q, k), _kernels_py.knn(c, q, k))
            assert np.array_equal(_kernels.nearest_sq_dist(q, c), _kernels_py.nearest_sq_dist(q, c))
            assert _kernels.min_pairwise_sq(c) == _kernels_py.min_pairwise_sq(c)

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_row_matmul_matches_and_is_row_stable(self, dtype):
        from maskpoint import _kernels, _kernels_py
        rng = np.random.default_rng(2)
        x = rng.standard_normal((37, 24)).astype(dtype)
        w = rng.standard_normal((24, 19)).astype(dtype)
        full = _kernels.row_matmul(x, w)
        np.testing.assert_allclose(full, _kernels_py.row_matmul(x, w), rtol=1e-5 if dtype == np.float32 else 1e-12)
        for _ in range(20):
            rows = np.sort(rng.choice(37, size=int(rng.integers(1, 37)), replace=False))
            assert np.array_equal(_kernels.row_matmul(np.ascontiguousarray(x[rows]), w), full[rows])
            assert np.array_equal(_kernels_py.row_matmul(np.ascontiguousarray(x[rows]), w),
                                  _kernels_py.row_matmul(x, w)[rows])


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")


class TestPurePythonSelection:
    def _run(self, env_value, code):
        env = dict(os.environ, MASKPOINT_PURE_PYTHON=env_value)
        return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout

    def test_env_forces_fallback(self):
        assert self._run("1", "from maskpoint import kernels; print(kernels.BACKEND)").strip() == "python"

    def test_fallback_results_match_default(self):
        code = ("import numpy as np; from maskpoint import geometry; "
                "c = np.random.default_rng(3).standard_normal((200, 3)); "
                "print(geometry.fps(c, 32, 0).tolist(), geometry.knn(c, c[5], 9).tolist(), "
                "repr(geometry.chamfer_l2(c[:50], c[50:])))")
        assert self._run("1", code) == self._run("0", code)
