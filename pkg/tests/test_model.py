import math

import numpy as np
import pytest

from maskpoint import autodiff as ad
from maskpoint import geometry, masking
from maskpoint.errors import InputError
from maskpoint.model import (LossConfig, MaskPointModel, ModelConfig, chamfer_loss, focal_loss, patchify,
                             prepare_cloud, pretrain_forward, reconstruction_baseline_loss, stack_queries)

SMALL = ModelConfig(dim=32, n_heads=4, n_enc_layers=2, patch_count=8, patch_size=8)


def dyadic_cloud(rng, n=64):
    # multiples of 1/64 in [-1, 1]: sums and differences with other dyadics are exact
    return rng.integers(-64, 65, size=(n, 3)) / 64.0


@pytest.fixture
def model():
    m = MaskPointModel(SMALL, seed=0)
    m.eval()
    return m


class TestPatchify:
    def test_reference_shape(self, rng):
        ps = patchify(rng.standard_normal((1024, 3)), 64, 32)
        assert ps.groups.shape == (64, 32, 3) and ps.centers.shape == (64, 3)

    def test_own_center(self, rng):
        cloud = rng.standard_normal((10, 3))
        ps = patchify(cloud, 10, 1)
        assert np.all(ps.groups == 0)

    def test_membership_and_definition(self, rng):
        cloud = rng.standard_normal((100, 3))
        ps = patchify(cloud, 8, 12)
        assert np.array_equal(ps.centers, cloud[geometry.fps(cloud, 8, 0)])
        for j in range(8):
            assert np.array_equal(ps.index[j], geometry.knn(cloud, ps.centers[j], 12))
            assert np.array_equal(ps.groups[j], cloud[ps.index[j]] - ps.centers[j])
            np.testing.assert_allclose(ps.groups[j] + ps.centers[j], cloud[ps.index[j]], rtol=0, atol=1e-15)


class TestPatchEmbed:
    def test_point_permutation_bit_exact(self, model, rng):
        groups = rng.standard_normal((2, 5, 8, 3))
        perm = groups[:, :, rng.permutation(8)]
        assert np.array_equal(model.patch_embed(groups).data, model.patch_embed(perm).data)

    def test_duplication_bit_exact(self, model, rng):
        groups = rng.standard_normal((1, 3, 8, 3))
        doubled = np.concatenate([groups, groups], axis=2)
        assert np.array_equal(model.patch_embed(groups).data, model.patch_embed(doubled).data)

    def test_shape(self, model, rng):
        assert model.patch_embed(rng.standard_normal((3, 7, 8, 3))).shape == (3, 7, SMALL.dim)


class TestPosEmbed:
    def test_width_and_sharing(self, model, rng):
        xyz = rng.standard_normal((1, 4, 3))
        a = model.positions(xyz).data
        assert a.shape == (1, 4, SMALL.dim)
        assert np.array_equal(a, model.positions(xyz.copy()).data)
        assert SMALL.pos_width == SMALL.dim // 3


class TestEncoder:
    def test_sequence_length(self, rng):
        cfg = ModelConfig(dim=16, n_heads=2, n_enc_layers=1, patch_count=64, patch_size=4)
        m = MaskPointModel(cfg)
        m.eval()
        cloud = rng.standard_normal((256, 3))
        prep = prepare_cloud(cloud, cfg, masking.MaskConfig(ratio=0.9), rng)
        assert len(prep.partition.unmasked) == 6
        groups = prep.patches.groups[prep.partition.unmasked][None]
        centers = prep.patches.centers[prep.partition.unmasked][None]
        assert m.encode(groups, centers).shape == (1, 7, 16)

    def test_order_equivariant(self, model, rng):
        groups = rng.standard_normal((1, 5, 8, 3))
        centers = rng.standard_normal((1, 5, 3))
        perm = rng.permutation(5)
        out = model.encode(groups, centers).data
        permuted = model.encode(groups[:, perm], centers[:, perm]).data
        np.testing.assert_allclose(permuted[:, 0], out[:, 0], atol=1e-5)
        np.testing.assert_allclose(permuted[:, 1:], out[:, 1:][:, perm], atol=1e-5)

    def test_eval_deterministic(self, rng):
        m = MaskPointModel(ModelConfig(dim=32, n_heads=4, patch_count=8, patch_size=8), seed=1)
        m.eval()
        groups, centers = rng.standard_normal((2, 3, 8, 3)), rng.standard_normal((2, 3, 3))
        assert np.array_equal(m.encode(groups, centers, rng).data, m.encode(groups, centers, rng).data)

    def test_features_width(self, model, rng):
        latent = model.encode(rng.standard_normal((2, 3, 8, 3)), rng.standard_normal((2, 3, 3)))
        assert model.features(latent).shape == (2, 2 * SMALL.dim)


class TestDecoder:
    def _latent(self, model, rng):
        groups, centers = rng.standard_normal((1, 3, 8, 3)), rng.standard_normal((1, 3, 3))
        return model.encode(groups, centers), centers

    def test_subset_removal_bit_exact(self, model, rng):
        latent, centers = self._latent(model, rng)
        queries = rng.uniform(-1, 1, (1, 48, 3))
        full = model.decode(latent, centers, queries).data[0]
        for _ in range(30):
            keep = np.sort(rng.choice(48, size=int(rng.integers(1, 48)), replace=False))
            part = model.decode(latent, centers, queries[:, keep]).data[0]
            assert np.array_equal(part, full[keep])

    def test_duplicates_identical(self, model, rng):
        latent, centers = self._latent(model, rng)
        q = rng.uniform(-1, 1, (1, 1, 3))
        out = model.decode(latent, centers, np.repeat(q, 5, axis=1)).data[0]
        assert np.all(out == out[0])

    def test_count(self, model, rng):
        latent, centers = self._latent(model, rng)
        assert model.decode(latent, centers, rng.uniform(-1, 1, (1, 11, 3))).shape == (1, 11)


class TestTranslation:
    def test_patch_tokens_invariant(self, model, rng):
        cloud = dyadic_cloud(rng)
        shift = np.array([0.25, -0.5, 0.125])
        a = patchify(cloud, 8, 8)
        b = patchify(cloud + shift, 8, 8)
        assert np.array_equal(a.groups, b.groups)
        assert np.array_equal(model.patch_embed(a.groups[None]).data, model.patch_embed(b.groups[None]).data)

    def test_logits_change_only_through_positions(self, rng):
        cloud = dyadic_cloud(rng)
        shift = np.array([0.25, -0.5, 0.125])
        cfg = masking.MaskConfig(ratio=0.5, n_queries=8, gamma_fps_count=8)
        base = MaskPointModel(SMALL, seed=2)
        moved = MaskPointModel(SMALL, seed=2)
        moved.eval()
        embed = moved.positions
        moved.positions = lambda xyz: embed(np.asarray(xyz) - shift)
        out_a = pretrain_forward(cloud[None], cfg, base, LossConfig(), np.random.default_rng(0), training=False)
        prep = out_a["prepared"][0]
        qa, _, _ = stack_queries([prep.queries])
        part = prep.partition
        b_patch = patchify(cloud + shift, 8, 8)
        latent = moved.encode(b_patch.groups[part.unmasked][None], b_patch.centers[part.unmasked][None])
        logits_b = moved.decode(latent, b_patch.centers[part.unmasked][None], qa + shift)
        assert np.array_equal(out_a["logits"].data, logits_b.data)


class TestFocal:
    def test_hand_value(self):
        logit = math.log(0.9 / 0.1)
        loss = focal_loss(ad.Tensor(np.array([logit])), np.array([1.0]), LossConfig(0.25, 2.0))
        assert abs(loss.item() - 2.634e-4) <= 1e-8
        assert loss.item() == pytest.approx(-0.25 * 0.01 * math.log(0.9), rel=1e-12)

    def test_half_bce(self, rng):
        logits = rng.standard_normal(200) * 4
        labels = (rng.random(200) < 0.5).astype(float)
        p = 1 / (1 + np.exp(-logits))
        bce = -np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p))
        loss = focal_loss(ad.Tensor(logits), labels, LossConfig(0.5, 0.0)).item()
        assert abs(loss - 0.5 * bce) <= 1e-10

    def test_perfect_limit(self):
        loss = focal_loss(ad.Tensor(np.array([40.0, -40.0])), np.array([1.0, 0.0]), LossConfig())
        assert 0.0 <= loss.item() < 1e-30

    def test_extreme_logits_finite(self):
        loss = focal_loss(ad.Tensor(np.array([-800.0, 800.0])), np.array([1.0, 0.0]), LossConfig())
        assert np.isfinite(loss.item())

    def test_weights_exclude_padding(self, rng):
        logits = rng.standard_normal(6)
        labels = np.array([1, 1, 0, 0, 1, 0.0])
        w = np.array([1, 1, 1, 1, 0, 0.0])
        full = focal_loss(ad.Tensor(logits[:4]), labels[:4], LossConfig()).item()
        assert focal_loss(ad.Tensor(logits), labels, LossConfig(), w).item() == pytest.approx(full, rel=1e-14)

    @pytest.mark.parametrize("kw", [{"focal_alpha": 0.0}, {"focal_alpha": 1.0}, {"focal_gamma": -1.0}])
    def test_config_rejects(self, kw):
        with pytest.raises(InputError):
            LossConfig(**kw)

    def test_empty(self):
        with pytest.raises(InputError):
            focal_loss(ad.Tensor(np.zeros(0)), np.zeros(0), LossConfig())


class TestPretrainForward:
    def test_sane_at_init(self, rng):
        cloud = np.stack([rng.standard_normal((128, 3)) for _ in range(2)])
        # gamma from 64 FPS points keeps fakes available on these gaussian clouds
        mask = masking.MaskConfig(n_queries=16, gamma_fps_count=64)
        out = pretrain_forward(cloud, mask, MaskPointModel(SMALL), LossConfig(), rng)
        assert np.isfinite(out["loss"].item()) and out["loss"].item() > 0
        assert 0 <= out["acc_real"] <= 1 and 0 <= out["acc_fake"] <= 1
        assert out["logits"].shape == (2, 32)

    def test_no_surviving_fakes(self, rng):
        # two far-apart blobs: gamma from 2 FPS points exceeds every box distance
        cloud = np.concatenate([rng.standard_normal((64, 3)) * 0.01, rng.standard_normal((64, 3)) * 0.01 + 5])
        mask = masking.MaskConfig(n_queries=8, gamma_fps_count=2)
        out = pretrain_forward(cloud[None], mask, MaskPointModel(SMALL, seed=0), LossConfig(), rng)
        assert np.isnan(out["acc_fake"]) and np.isfinite(out["loss"].item())
        assert np.all(out["weights"][out["labels"] == 0] == 0)

    def test_deterministic(self):
        cloud = np.random.default_rng(0).standard_normal((2, 128, 3))

        def run():
            return pretrain_forward(cloud, masking.MaskConfig(n_queries=16), MaskPointModel(SMALL, seed=4),
                                    LossConfig(), np.random.default_rng(1)).get("loss").item()

        assert run() == run()

    def test_stack_queries_padding(self, rng):
        full = masking.QuerySet(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)), 0.1)
        short = masking.QuerySet(rng.standard_normal((4, 3)), rng.standard_normal((1, 3)), 0.1)
        pts, labels, w = stack_queries([full, short])
        assert pts.shape == (2, 8, 3)
        assert labels.tolist() == [[1] * 4 + [0] * 4] * 2
        assert w[1].tolist() == [1, 1, 1, 1, 1, 0, 0, 0]


class TestReconstructionBaseline:
    def test_exact_prediction_zero(self, rng):
        target = rng.standard_normal((2, 3, 8, 3))
        assert reconstruction_baseline_loss(ad.Tensor(target), target).item() == 0.0

    def test_permutation_symmetric(self, rng):
        target = rng.standard_normal((1, 2, 8, 3))
        pred = rng.standard_normal((1, 2, 8, 3))
        a = chamfer_loss(ad.Tensor(pred), target).item()
        b = chamfer_loss(ad.Tensor(pred[:, :, rng.permutation(8)]), target).item()
        assert a == pytest.approx(b, rel=1e-14)

    def test_matches_geometry_chamfer(self, rng):
        pred, target = rng.standard_normal((1, 1, 8, 3)), rng.standard_normal((1, 1, 8, 3))
        assert chamfer_loss(ad.Tensor(pred), target).item() == pytest.approx(
            geometry.chamfer_l2(pred[0, 0], target[0, 0]), rel=1e-12)

    def test_objective_runs(self, rng):
        cfg = ModelConfig(dim=16, n_heads=2, n_enc_layers=1, patch_count=8, patch_size=8,
                          objective="reconstruction")
        out = pretrain_forward(rng.standard_normal((2, 64, 3)), masking.MaskConfig(ratio=0.5),
                               MaskPointModel(cfg), LossConfig(), rng)
        assert out["prediction"].shape == (2, 4, 8, 3) and out["loss"].item() > 0


class TestConfig:
    def test_heads_divide_dim(self):
        with pytest.raises(InputError):
            ModelConfig(dim=30, n_heads=4)
