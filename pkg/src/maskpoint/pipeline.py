"""Pretraining and finetuning loops, occupancy-probe reconstruction, ablations."""
import csv
import hashlib
import io
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import data, geometry
from .data import DataConfig
from .checkpoint import Checkpoint
from .errors import ConfigMismatchError, InputError, NonFiniteError
from .masking import MaskConfig, make_mask
from .model import LossConfig, MaskPointModel, ModelConfig, patchify, pretrain_forward
from .nn import Linear, Module
from .optim import AdamW, global_grad_norm, lr_schedule

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "lr", "loss", "acc_real", "acc_fake")


@dataclass(frozen=True)
class TrainConfig:
    """Pretraining run. Defaults are the desk-scale setup; see ``REFERENCE_TRAIN``."""

    epochs: int = 20
    batch_size: int = 32
    base_lr: float = 2e-3
    weight_decay: float = 0.05
    warmup_epochs: int = 0
    seed: int = 0
    max_steps: int = 0  # > 0 overrides epochs
    augment: bool = False  # scale/translate; off at desk scale, see README
    model: ModelConfig = field(default_factory=ModelConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        for name in ("epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.base_lr <= 0 or self.weight_decay < 0 or self.warmup_epochs < 0 or self.max_steps < 0:
            raise InputError("base_lr must be > 0; weight_decay, warmup_epochs, max_steps >= 0")

    def schedule(self):
        """``(total_steps, warmup_steps)``."""
        per_epoch = math.ceil(self.data.n_train / self.batch_size)
        total = self.max_steps or self.epochs * per_epoch
        warmup = min(self.warmup_epochs * per_epoch, total - 1)
        return total, warmup


REFERENCE_TRAIN = dict(epochs=300, base_lr=5e-4, weight_decay=5e-2, warmup_epochs=3, batch_size=128)


def _seeds(seed):
    """Independent generators for data, weights and training noise."""
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def dataset_for(cfg):
    """``(train_clouds, train_labels, test_clouds, test_labels)`` for ``cfg``."""
    data_rng, _, _ = _seeds(cfg.seed)
    d = cfg.data
    base = int(data_rng.integers(2**31))
    tr = data.make_dataset(d.n_train, d.n_points, base, d.jitter)
    te = data.make_dataset(d.n_test, d.n_points, base + 1, d.jitter)
    return tr[0], tr[1], te[0], te[1]


def decay_mask(model):
    # no decay on biases, norm parameters, or the class token
    return {name: p.ndim >= 2 for name, p in model.parameters().items()}


@dataclass
class PretrainResult:
    model: MaskPointModel
    checkpoint: Checkpoint
    metrics: list
    dataset: tuple


class TrainingDiverged(RuntimeError):
    pass


def format_metric_row(row):
    return ",".join(str(row[k]) if k == "step" else repr(float(row[k])) for k in METRICS_HEADER)


def pretrain(cfg, out_dir=None, dataset=None, progress=None):
    """Run masked point discrimination pretraining.

    Emits one metrics row per optimizer step (``step, lr, loss, acc_real,
    acc_fake``); with ``out_dir`` they stream to ``metrics.csv`` and the final
    checkpoint is written to ``checkpoint.mpt``.
    """
    _, init_rng, rng = _seeds(cfg.seed)
    if dataset is None:
        dataset = dataset_for(cfg)
    train_clouds = dataset[0]
    model = MaskPointModel(cfg.model, seed=int(init_rng.integers(2**31)))
    params = model.parameters()
    opt = AdamW(params, lr=cfg.base_lr, weight_decay=cfg.weight_decay, decay_mask=decay_mask(model))
    total, warmup = cfg.schedule()
    metrics = []
    sink = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        sink = open(os.path.join(out_dir, "metrics.csv"), "w", newline="")
        sink.write(",".join(METRICS_HEADER) + "\n")
    try:
        order = np.zeros(0, dtype=np.int64)
        for step in range(1, total + 1):
            if len(order) < cfg.batch_size:
                order = np.concatenate([order, rng.permutation(len(train_clouds))])
            idx, order = order[: cfg.batch_size], order[cfg.batch_size:]
            batch = train_clouds[idx]
            if cfg.augment:
                batch = data.augment(batch, rng)
            lr = lr_schedule(step, total, warmup, cfg.base_lr)
            try:
                with ad.GradTape() as tape:
                    out = pretrain_forward(batch, cfg.mask, model, cfg.loss, rng, training=True)
                    loss = out["loss"]
                tape.backward(loss)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite value at step {step} (lr={lr:.3g}, "
                                       f"grad-norm={global_grad_norm(params):.3g}): {exc}") from exc
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"loss is {loss.item()} at step {step} (lr={lr:.3g}, "
                                       f"grad-norm={global_grad_norm(params):.3g})")
            opt.step(lr)
            opt.zero_grad()
            row = {"step": step, "lr": lr, "loss": loss.item(),
                   "acc_real": out["acc_real"], "acc_fake": out["acc_fake"]}
            metrics.append(row)
            if sink is not None:
                sink.write(format_metric_row(row) + "\n")
            if progress is not None:
                progress(row)
    finally:
        if sink is not None:
            sink.close()
    model.eval()
    ckpt = Checkpoint.from_model(model, step=total, seed=cfg.seed,
                                 extra={"train_config": train_config_dict(cfg)})
    if out_dir is not None:
        from .checkpoint import save_checkpoint
        save_checkpoint(ckpt, os.path.join(out_dir, "checkpoint.mpt"))
    return PretrainResult(model, ckpt, metrics, dataset)


def train_config_dict(cfg):
    return asdict(cfg)


def metrics_csv(metrics):
    buf = io.StringIO()
    buf.write(",".join(METRICS_HEADER) + "\n")
    for row in metrics:
        buf.write(format_metric_row(row) + "\n")
    return buf.getvalue()


def evaluate_pretrain(model, clouds, mask_cfg, loss_cfg, seed=0, batch_size=64):
    """Held-out discrimination metrics in eval mode: mean loss, acc_real, acc_fake."""
    rng = np.random.default_rng(seed)
    losses, real_hits, real_n, fake_hits, fake_n = [], 0, 0, 0, 0
    for lo in range(0, len(clouds), batch_size):
        out = pretrain_forward(clouds[lo:lo + batch_size], mask_cfg, model, loss_cfg, rng, training=False)
        pred = out["logits"].data > 0
        real = (out["labels"] > 0) & (out["weights"] > 0)
        fake = (out["labels"] == 0) & (out["weights"] > 0)
        real_hits += int(pred[real].sum())
        real_n += int(real.sum())
        fake_hits += int((~pred[fake]).sum())
        fake_n += int(fake.sum())
        losses.append(out["loss"].item() * len(out["labels"]))
    acc_real = real_hits / max(real_n, 1)
    acc_fake = fake_hits / max(fake_n, 1)
    return {"loss": sum(losses) / len(clouds), "acc_real": acc_real, "acc_fake": acc_fake,
            "accuracy": 0.5 * (acc_real + acc_fake)}


# ---------------------------------------------------------- classification


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 3e-3
    weight_decay: float = 0.05
    hidden: tuple = (128, 64)
    dropout_p: float = 0.1
    seed: int = 0


class ClassifierHead(Module):
    """Three-layer MLP with ReLU and dropout over the ``2d`` feature."""

    def __init__(self, n_in, hidden, n_classes, rng, dtype=np.float32, dropout_p=0.5):
        widths = (n_in, *hidden, n_classes)
        self.layers = [Linear(a, b, rng, dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.dropout_p = dropout_p

    def __call__(self, x, rng=None):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.dropout(ad.relu(x), self.dropout_p, self.training, rng)
        return x


def cross_entropy(logits, labels):
    logp = ad.log_softmax(logits, -1)
    picked = logp[np.arange(len(labels)), labels]
    return -picked.mean()


def patch_all(clouds, model_cfg):
    """Patchify every cloud with all groups visible: ``(groups, centers)`` arrays."""
    sets = [patchify(c, model_cfg.patch_count, model_cfg.patch_size) for c in clouds]
    return np.stack([s.groups for s in sets]), np.stack([s.centers for s in sets])


def encoder_features(model, groups, centers, batch_size=128):
    """Frozen ``(n, 2d)`` features: eval mode, no tape."""
    model.eval()
    feats = []
    for lo in range(0, len(groups), batch_size):
        latent = model.encode(groups[lo:lo + batch_size], centers[lo:lo + batch_size])
        feats.append(model.features(latent).data)
    return np.concatenate(feats)


def parameter_hash(params):
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


def _as_model(source, model_cfg=None):
    if isinstance(source, Checkpoint):
        if model_cfg is not None and source.model_config != model_cfg:
            raise ConfigMismatchError("checkpoint model config differs from the requested config")
        return source.to_model()
    if isinstance(source, MaskPointModel):
        return source
    raise InputError(f"expected a Checkpoint or MaskPointModel, got {type(source).__name__}")


def finetune_classify(source, dataset, mode="linear_probe", cfg=ProbeConfig(), n_classes=len(data.SHAPES),
                      model_cfg=None, return_details=False):
    """Train a classification head and return held-out accuracy.

    ``dataset`` is ``(train_clouds, train_labels, test_clouds, test_labels)``.
    ``linear_probe`` freezes the encoder (features are computed once);
    ``full`` updates encoder and head together.
    """
    if mode not in ("linear_probe", "full"):
        raise InputError(f"mode must be 'linear_probe' or 'full', got {mode!r}")
    model = _as_model(source, model_cfg)
    tr_x, tr_y, te_x, te_y = dataset
    rng = np.random.default_rng(cfg.seed)
    d = model.cfg.dim
    head = ClassifierHead(2 * d, cfg.hidden, n_classes, rng, model.dtype, cfg.dropout_p)
    tr_g, tr_c = patch_all(tr_x, model.cfg)
    te_g, te_c = patch_all(te_x, model.cfg)
    encoder_hash = parameter_hash(model.parameters())

    if mode == "linear_probe":
        tr_f = encoder_features(model, tr_g, tr_c)
        te_f = encoder_features(model, te_g, te_c)
        params = head.parameters()
    else:
        keep = set(model.encoder_parameter_names())
        params = {f"encoder.{n}": p for n, p in model.parameters().items() if n in keep}
        params.update({f"head.{n}": p for n, p in head.parameters().items()})
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay,
                decay_mask={n: p.ndim >= 2 for n, p in params.items()})
    per_epoch = math.ceil(len(tr_y) / cfg.batch_size)
    total = cfg.epochs * per_epoch
    warmup = min(per_epoch, total - 1)
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(tr_y))
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            step += 1
            head.train()
            with ad.GradTape() as tape:
                if mode == "linear_probe":
                    feats = ad.Tensor(tr_f[idx])
                else:
                    model.train()
                    feats = model.features(model.encode(tr_g[idx], tr_c[idx], rng))
                loss = cross_entropy(head(feats, rng), tr_y[idx])
            tape.backward(loss)
            opt.step(lr_schedule(step, total, warmup, cfg.lr))
            opt.zero_grad()

    head.eval()
    if mode == "full":
        te_f = encoder_features(model, te_g, te_c)
    pred = np.argmax(head(ad.Tensor(te_f)).data, axis=1)
    acc = float(np.mean(pred == te_y))
    if return_details:
        return {"accuracy": acc, "encoder_hash_before": encoder_hash,
                "encoder_hash_after": parameter_hash(model.parameters()),
                "feature_width": int(te_f.shape[1]), "model": model, "head": head}
    return acc


# ----------------------------------------------------------- reconstruction


@dataclass
class Reconstruction:
    points: np.ndarray  # probes with probability >= threshold
    probes: np.ndarray  # all probe locations
    probabilities: np.ndarray
    visible_centers: np.ndarray
    threshold: float

    def at(self, threshold):
        return self.probes[self.probabilities >= threshold]


def reconstruct(source, cloud, mask_ratio=0.9, n_probe=4096, threshold=0.5, seed=0, mask_mode="random",
                probes=None):
    """Occupancy-probe reconstruction of a masked cloud.

    Masks the cloud's patch groups, encodes the visible ones, and evaluates
    the decoder's occupancy probability at ``n_probe`` uniform samples of the
    cloud's bounding box (or at the given ``probes``).
    """
    if not 0.0 <= threshold <= 1.0:
        raise InputError(f"threshold must be in [0, 1], got {threshold}")
    model = _as_model(source)
    if model.cfg.objective != "discrimination":
        raise InputError("reconstruction by probing needs a discrimination model")
    cloud = geometry.as_cloud(cloud)
    rng = np.random.default_rng(seed)
    model.eval()
    patches = patchify(cloud, model.cfg.patch_count, model.cfg.patch_size)
    part = make_mask(MaskConfig(ratio=mask_ratio, mode=mask_mode), patches.centers, rng)
    if probes is None:
        if n_probe < 1:
            raise InputError(f"n_probe must be >= 1, got {n_probe}")
        probes = geometry.sample_uniform_in_aabb(geometry.aabb(cloud), n_probe, rng)
    probes = geometry.as_cloud(probes, "probes")
    groups = patches.groups[part.unmasked][None]
    centers = patches.centers[part.unmasked][None]
    latent = model.encode(groups, centers)
    logits = model.decode(latent, centers, probes[None]).data[0].astype(np.float64)
    prob = np.exp(-np.logaddexp(0.0, -logits))
    return Reconstruction(probes[prob >= threshold], probes, prob, centers[0], threshold)


def best_threshold_cd(recon, cloud, thresholds=None):
    """Smallest CD-L2 to ``cloud`` over a threshold sweep: ``(cd, tau)``.

    The default sweep is a fixed 0.05 grid plus 100 quantiles of the
    probabilities, so saturated outputs are still resolved. Thresholds that
    keep no probe are skipped.
    """
    if thresholds is None:
        grid = np.round(np.linspace(0.0, 0.95, 20), 2)
        thresholds = np.unique(np.concatenate([grid, np.quantile(recon.probabilities, np.linspace(0, 0.99, 100))]))
    best = (math.inf, None)
    for tau in thresholds:
        pts = recon.at(tau)
        if len(pts) == 0:
            continue
        cd = geometry.chamfer_l2(pts, cloud)
        if cd < best[0]:
            best = (cd, float(tau))
    return best


# ---------------------------------------------------------------- ablation

ABLATION_AXES = ("mask_ratio", "mask_type", "n_queries", "dec_layers")

# full-scale overall accuracy (%) per ablation value, reported next to desk-scale results
REFERENCE_ABLATION = {
    "mask_ratio": {0.25: 83.2, 0.5: 83.7, 0.75: 84.1, 0.9: 84.6},
    "mask_type": {"random": 84.6, "block": 84.1},
    "n_queries": {64: 83.7, 256: 84.6, 1024: 83.9},
    "dec_layers": {1: 84.6, 3: 83.7, 6: 83.9},
}


def apply_axis(cfg, axis, value):
    if axis == "mask_ratio":
        return replace(cfg, mask=replace(cfg.mask, ratio=float(value)))
    if axis == "mask_type":
        return replace(cfg, mask=replace(cfg.mask, mode=str(value)))
    if axis == "n_queries":
        return replace(cfg, mask=replace(cfg.mask, n_queries=int(value)))
    if axis == "dec_layers":
        return replace(cfg, model=replace(cfg.model, n_dec_layers=int(value)))
    raise InputError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")


def ablate(cfg, axis, values, probe_cfg=ProbeConfig(), dataset=None):
    """Pretrain and linear-probe once per value along ``axis``.

    Returns the rows and their CSV text (``axis,value,query_acc,probe_acc,reference_oa``).
    """
    if not values:
        raise InputError("ablation needs at least one value")
    if dataset is None:
        dataset = dataset_for(cfg)
    rows = []
    for value in values:
        run_cfg = apply_axis(cfg, axis, value)
        result = pretrain(run_cfg, dataset=dataset)
        held = evaluate_pretrain(result.model, dataset[2], run_cfg.mask, run_cfg.loss, seed=cfg.seed)
        acc = finetune_classify(result.model, dataset, "linear_probe", probe_cfg)
        ref = REFERENCE_ABLATION.get(axis, {}).get(value)
        rows.append({"axis": axis, "value": value, "query_acc": held["accuracy"],
                     "probe_acc": acc, "reference_oa": "" if ref is None else ref})
        log.info("ablate %s=%s query_acc=%.4f probe_acc=%.4f", axis, value, held["accuracy"], acc)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["axis", "value", "query_acc", "probe_acc", "reference_oa"])
    for r in rows:
        writer.writerow([r["axis"], r["value"], repr(r["query_acc"]), repr(r["probe_acc"]), r["reference_oa"]])
    return rows, buf.getvalue()
