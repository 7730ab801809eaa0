"""The MaskPoint network and its pretraining forward pass.

Shapes use ``B`` clouds, ``S`` patch groups of ``k`` points, ``U`` visible
groups, ``Q`` decoder queries and token width ``d``.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import geometry, masking
from .errors import InputError
from .nn import MLP, LayerNorm, Linear, Module


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    n_heads: int = 4
    n_enc_layers: int = 3
    n_dec_layers: int = 1
    ffn_ratio: int = 4
    dropout_p: float = 0.1
    droppath_p: float = 0.1
    patch_count: int = 16
    patch_size: int = 32
    pos_hidden: int = 0  # 0: dim // 3 (128 at dim 384)
    head_hidden: int = 0  # 0: dim // 6 (64 at dim 384)
    objective: str = "discrimination"
    dtype: str = "float32"

    def __post_init__(self):
        if self.dim % self.n_heads:
            raise InputError(f"dim {self.dim} is not divisible by n_heads {self.n_heads}")
        if self.dim % 2:
            raise InputError(f"dim must be even, got {self.dim}")
        for name in ("n_enc_layers", "n_dec_layers", "ffn_ratio", "patch_count", "patch_size"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.objective not in ("discrimination", "reconstruction"):
            raise InputError(f"unknown objective {self.objective!r}")

    @property
    def pos_width(self):
        return self.pos_hidden or max(4, self.dim // 3)

    @property
    def head_width(self):
        return self.head_hidden or max(4, self.dim // 6)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


REFERENCE_MODEL = ModelConfig(dim=384, n_heads=6, n_enc_layers=12, n_dec_layers=1, ffn_ratio=4,
                              dropout_p=0.1, droppath_p=0.1, patch_count=64, patch_size=32)


@dataclass(frozen=True)
class LossConfig:
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.focal_alpha < 1.0:
            raise InputError(f"focal_alpha must be in (0, 1), got {self.focal_alpha}")
        if self.focal_gamma < 0:
            raise InputError(f"focal_gamma must be >= 0, got {self.focal_gamma}")


@dataclass
class PatchSet:
    centers: np.ndarray  # (S, 3)
    groups: np.ndarray  # (S, k, 3), relative to the centers
    index: np.ndarray  # (S, k) indices into the cloud


def patchify(cloud, n_patches, patch_size):
    """FPS centers (seeded at index 0) and their kNN groups, stored center-relative."""
    cloud = geometry.as_cloud(cloud)
    centers_idx = geometry.fps(cloud, n_patches, 0)
    centers = cloud[centers_idx]
    index = geometry.knn_many(cloud, centers, patch_size)
    groups = cloud[index] - centers[:, None, :]
    return PatchSet(centers, groups, index)


# -------------------------------------------------------------------- layers


class PatchEmbed(Module):
    """PointNet over one group: shared per-point MLP, channel max-pool, linear."""

    def __init__(self, dim, rng, dtype):
        self.point_mlp = MLP(3, dim // 2, dim, rng, dtype, activation="gelu", row_stable=True)
        self.proj = Linear(dim, dim, rng, dtype)

    def __call__(self, groups):
        feats = self.point_mlp(ad.Tensor(groups, dtype=self.proj.weight.dtype))
        return self.proj(feats.max(axis=-2))


class SelfAttention(Module):
    def __init__(self, dim, n_heads, rng, dtype):
        self.n_heads = n_heads
        self.qkv = Linear(dim, 3 * dim, rng, dtype)
        self.proj = Linear(dim, dim, rng, dtype)

    def __call__(self, x):
        b, t, d = x.shape
        h = self.n_heads
        qkv = self.qkv(x).reshape(b, t, 3, h, d // h).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d // h))
        out = ad.matmul(ad.softmax(scores, -1), v)
        return self.proj(out.transpose(0, 2, 1, 3).reshape(b, t, d))


class CrossAttention(Module):
    """Queries attend to memory tokens only; query rows never interact.

    Every op on the query side is row-stable, so a query's output is
    bit-identical regardless of which other queries share the batch.
    """

    def __init__(self, dim, n_heads, rng, dtype):
        self.n_heads = n_heads
        self.q = Linear(dim, dim, rng, dtype, row_stable=True)
        self.kv = Linear(dim, 2 * dim, rng, dtype)
        self.proj = Linear(dim, dim, rng, dtype, row_stable=True)

    def __call__(self, x, memory):
        b, nq, d = x.shape
        t = memory.shape[1]
        h = self.n_heads
        dh = d // h
        q = self.q(x).reshape(b, nq, h, dh).transpose(0, 2, 1, 3)  # b h q dh
        kv = self.kv(memory).reshape(b, t, 2, h, dh).transpose(2, 0, 3, 1, 4)
        k, v = kv[0], kv[1]  # b h t dh
        scores = (q.reshape(b, h, nq, 1, dh) * k.reshape(b, h, 1, t, dh)).sum(axis=-1)
        attn = ad.softmax(scores * (1.0 / np.sqrt(dh)), -1)  # b h q t
        out = (attn.reshape(b, h, nq, t, 1) * v.reshape(b, h, 1, t, dh)).sum(axis=3)
        return self.proj(out.transpose(0, 2, 1, 3).reshape(b, nq, d))


class EncoderBlock(Module):
    def __init__(self, cfg, rng, dtype):
        self.norm1 = LayerNorm(cfg.dim, dtype)
        self.attn = SelfAttention(cfg.dim, cfg.n_heads, rng, dtype)
        self.norm2 = LayerNorm(cfg.dim, dtype)
        self.ffn = MLP(cfg.dim, cfg.ffn_ratio * cfg.dim, cfg.dim, rng, dtype,
                       activation="relu", dropout_p=cfg.dropout_p)
        self.droppath_p = cfg.droppath_p

    def __call__(self, x, rng=None):
        x = x + ad.droppath(self.attn(self.norm1(x)), self.droppath_p, self.training, rng)
        return x + ad.droppath(self.ffn(self.norm2(x), rng), self.droppath_p, self.training, rng)


class DecoderBlock(Module):
    def __init__(self, cfg, rng, dtype):
        self.norm1 = LayerNorm(cfg.dim, dtype)
        self.attn = CrossAttention(cfg.dim, cfg.n_heads, rng, dtype)
        self.norm2 = LayerNorm(cfg.dim, dtype)
        self.ffn = MLP(cfg.dim, cfg.ffn_ratio * cfg.dim, cfg.dim, rng, dtype,
                       activation="relu", dropout_p=cfg.dropout_p, row_stable=True)
        self.droppath_p = cfg.droppath_p

    def __call__(self, x, memory, rng=None):
        x = x + ad.droppath(self.attn(self.norm1(x), memory), self.droppath_p, self.training, rng)
        return x + ad.droppath(self.ffn(self.norm2(x), rng), self.droppath_p, self.training, rng)


# --------------------------------------------------------------------- model


class MaskPointModel(Module):
    """Patch embedder, encoder, and the pretraining decoder with its head.

    ``objective="discrimination"`` builds the occupancy head (one logit per
    query); ``"reconstruction"`` builds the Chamfer baseline head that
    regresses the ``k`` points of each masked group instead.
    """

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(seed)
        d = cfg.dim
        self.patch_embed = PatchEmbed(d, rng, dtype)
        self.pos_embed = MLP(3, cfg.pos_width, d, rng, dtype, activation="gelu", row_stable=True)
        self.cls_token = ad.Parameter((0.02 * rng.standard_normal(d)).astype(dtype))
        self.encoder = [EncoderBlock(cfg, rng, dtype) for _ in range(cfg.n_enc_layers)]
        self.enc_norm = LayerNorm(d, dtype)
        self.decoder = [DecoderBlock(cfg, rng, dtype) for _ in range(cfg.n_dec_layers)]
        self.dec_norm = LayerNorm(d, dtype)
        if cfg.objective == "discrimination":
            self.head = MLP(d, cfg.head_width, 1, rng, dtype, activation="gelu", row_stable=True)
        else:
            self.head = Linear(d, 3 * cfg.patch_size, rng, dtype)

    @property
    def dtype(self):
        return self.cls_token.dtype

    def encoder_parameter_names(self):
        """Parameters reused downstream: patch embedder, positions, class token, encoder."""
        keep = ("patch_embed.", "pos_embed.", "cls_token", "encoder.", "enc_norm.")
        return [n for n in self.parameters() if n.startswith(keep)]

    def positions(self, xyz):
        return self.pos_embed(ad.Tensor(xyz, dtype=self.dtype))

    def encode(self, groups, centers, rng=None):
        """Encode visible groups ``(B, U, k, 3)`` at ``centers`` ``(B, U, 3)``.

        Returns the latent ``(B, U + 1, d)``: class token first.
        """
        tokens = self.patch_embed(groups) + self.positions(centers)
        b = tokens.shape[0]
        cls = ad.reshape(self.cls_token, (1, 1, -1)) + ad.Tensor(np.zeros((b, 1, 1), self.dtype))
        x = ad.concat([cls, tokens], axis=1)
        for block in self.encoder:
            x = block(x, rng)
        return self.enc_norm(x)

    def memory(self, latent, centers):
        """Decoder keys/values: latent plus positions (zero for the class token)."""
        pos = self.positions(centers)
        b, _, d = pos.shape
        pos = ad.concat([ad.Tensor(np.zeros((b, 1, d), self.dtype)), pos], axis=1)
        return latent + pos

    def decode(self, latent, centers, queries, rng=None):
        """Occupancy logits ``(B, Q)`` for query points ``(B, Q, 3)``."""
        memory = self.memory(latent, centers)
        x = self.positions(queries)
        for block in self.decoder:
            x = block(x, memory, rng)
        return self.head(self.dec_norm(x)).reshape(x.shape[0], x.shape[1])

    def decode_points(self, latent, centers, masked_centers, rng=None):
        """Reconstruction baseline: predicted ``(B, M, k, 3)`` center-relative groups."""
        memory = self.memory(latent, centers)
        x = self.positions(masked_centers)
        for block in self.decoder:
            x = block(x, memory, rng)
        b, m, _ = x.shape
        return self.head(self.dec_norm(x)).reshape(b, m, self.cfg.patch_size, 3)

    def features(self, latent):
        """Classification feature: class token output concatenated with max-pooled patch tokens."""
        cls = latent[:, 0, :]
        pooled = latent[:, 1:, :].max(axis=1)
        return ad.concat([cls, pooled], axis=-1)


# -------------------------------------------------------------------- losses


def focal_loss(logits, labels, cfg, weights=None):
    """Mean binary focal loss ``-alpha_t (1 - p_t)^gamma log p_t`` over the queries.

    ``weights`` (0/1) excludes padded entries from the mean.
    """
    labels = np.asarray(labels)
    if labels.size == 0 or labels.shape != logits.shape:
        raise InputError(f"need matching non-empty logits/labels, got {logits.shape} vs {labels.shape}")
    dtype = logits.dtype
    sign = (2.0 * labels - 1.0).astype(dtype)
    alpha_t = np.where(labels > 0, cfg.focal_alpha, 1.0 - cfg.focal_alpha).astype(dtype)
    log_pt = ad.log_sigmoid(logits * sign)
    modulator = ad.power(1.0 - ad.exp(log_pt), cfg.focal_gamma)
    per_query = -(modulator * log_pt) * alpha_t
    if weights is None:
        return per_query.mean()
    weights = np.asarray(weights, dtype=dtype)
    return (per_query * weights).sum() * (1.0 / float(weights.sum()))


def chamfer_loss(pred, target):
    """Differentiable mean Chamfer-L2 over groups; ``pred`` and ``target`` are ``(..., k, 3)``."""
    target = ad.Tensor(target, dtype=pred.dtype)
    *lead, k, _ = pred.shape
    diff = pred.reshape(*lead, k, 1, 3) - target.reshape(*lead, 1, target.shape[-2], 3)
    d2 = (diff * diff).sum(axis=-1)
    per_group = ad.tmin(d2, axis=-1).mean(axis=-1) + ad.tmin(d2, axis=-2).mean(axis=-1)
    return per_group.mean()


# ------------------------------------------------------------ pretrain pass


@dataclass
class PreparedCloud:
    patches: PatchSet
    partition: masking.MaskPartition
    queries: masking.QuerySet | None = None
    extras: dict = field(default_factory=dict)


def prepare_cloud(cloud, model_cfg, mask_cfg, rng, with_queries=True):
    """Geometry half of a pretraining step for one cloud: patches, mask, queries."""
    cloud = geometry.as_cloud(cloud)
    patches = patchify(cloud, model_cfg.patch_count, model_cfg.patch_size)
    partition = masking.make_mask(mask_cfg, patches.centers, rng)
    prepared = PreparedCloud(patches, partition)
    if with_queries and len(partition.masked):
        count = min(mask_cfg.gamma_fps_count or model_cfg.patch_count, len(cloud))
        if count == model_cfg.patch_count:
            # the patch centers are exactly fps(cloud, S, 0)
            gamma = geometry.min_pairwise_distance(patches.centers)
        else:
            gamma = masking.compute_gamma(cloud, count)
        masked_idx = np.unique(patches.index[partition.masked])
        prepared.queries = masking.sample_queries(cloud, cloud[masked_idx], mask_cfg.n_queries, gamma, rng)
    return prepared


def _stack_visible(prepared):
    groups = np.stack([p.patches.groups[p.partition.unmasked] for p in prepared])
    centers = np.stack([p.patches.centers[p.partition.unmasked] for p in prepared])
    return groups, centers


def stack_queries(query_sets):
    """Pad query sets to one ``(B, Q, 3)`` array with labels and 0/1 weights."""
    n_q = max(len(qs.real_points) for qs in query_sets)
    width = 2 * n_q
    b = len(query_sets)
    points = np.zeros((b, width, 3))
    labels = np.zeros((b, width))
    weights = np.zeros((b, width))
    for i, qs in enumerate(query_sets):
        nr, nf = len(qs.real_points), len(qs.fake_points)
        points[i, :nr] = qs.real_points
        labels[i, :nr] = 1.0
        weights[i, :nr] = 1.0
        points[i, n_q:n_q + nf] = qs.fake_points
        weights[i, n_q:n_q + nf] = 1.0
        # padding rows reuse a real point; they carry zero weight
        points[i, nr:n_q] = qs.real_points[0]
        points[i, n_q + nf:] = qs.real_points[0]
    return points, labels, weights


def pretrain_forward(clouds, mask_cfg, model, loss_cfg, rng, training=True):
    """One pretraining pass over a batch of clouds ``(B, N, 3)``.

    Returns a dict with the scalar ``loss`` tensor, ``acc_real`` and
    ``acc_fake`` (fraction of logits on the correct side of 0), and the
    per-cloud geometry in ``prepared``.
    """
    model.train(training)
    cfg = model.cfg
    prepared = [prepare_cloud(c, cfg, mask_cfg, rng) for c in clouds]
    groups, centers = _stack_visible(prepared)
    latent = model.encode(groups, centers, rng)
    if cfg.objective == "reconstruction":
        return _reconstruction_pass(model, latent, centers, prepared, rng)
    if any(p.queries is None for p in prepared):
        raise InputError("pretraining needs at least one masked group per cloud")
    points, labels, weights = stack_queries([p.queries for p in prepared])
    logits = model.decode(latent, centers, points, rng)
    loss = focal_loss(logits, labels, loss_cfg, weights)
    pred = logits.data > 0
    real = (labels > 0) & (weights > 0)
    fake = (labels == 0) & (weights > 0)
    acc_real = float(pred[real].mean()) if real.any() else float("nan")
    acc_fake = float((~pred[fake]).mean()) if fake.any() else float("nan")
    return {"loss": loss, "acc_real": acc_real, "acc_fake": acc_fake,
            "logits": logits, "labels": labels, "weights": weights, "prepared": prepared}


def _reconstruction_pass(model, latent, centers, prepared, rng):
    masked_centers = np.stack([p.patches.centers[p.partition.masked] for p in prepared])
    target = np.stack([p.patches.groups[p.partition.masked] for p in prepared])
    pred = model.decode_points(latent, centers, masked_centers, rng)
    loss = reconstruction_baseline_loss(pred, target)
    return {"loss": loss, "acc_real": float("nan"), "acc_fake": float("nan"),
            "prediction": pred, "prepared": prepared}


def reconstruction_baseline_loss(pred, target):
    """Chamfer-L2 between predicted and true masked groups, averaged over groups."""
    if pred.shape[-3] < 1:
        raise InputError("reconstruction loss needs at least one masked group")
    return chamfer_loss(pred, target)
