"""Central finite-difference gradient checks for the tensor engine and the model."""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .masking import MaskConfig
from .model import LossConfig, MaskPointModel, ModelConfig, pretrain_forward


def rel_error(analytic, numeric, floor=1e-8):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def check_function(fn, inputs, h=1e-6, seed=0):
    """Max relative error of ``fn``'s gradient w.r.t. every entry of ``inputs``.

    ``fn`` maps Tensors to a Tensor; it is reduced to a scalar by a fixed
    random projection so every output entry contributes.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    out_shape = fn(*[ad.Tensor(x) for x in inputs]).shape
    proj = np.random.default_rng(seed).standard_normal(out_shape)

    def scalar(*arrays):
        return float(np.sum(fn(*[ad.Tensor(a) for a in arrays]).data * proj))

    leaves = [ad.Tensor(x.copy(), requires_grad=True) for x in inputs]
    with ad.GradTape() as tape:
        loss = (fn(*leaves) * proj).sum()
    tape.backward(loss)
    worst = 0.0
    for i, x in enumerate(inputs):
        analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(x)
        numeric = np.zeros_like(x)
        for j in np.ndindex(x.shape):
            plus = [a.copy() for a in inputs]
            minus = [a.copy() for a in inputs]
            plus[i][j] += h
            minus[i][j] -= h
            numeric[j] = (scalar(*plus) - scalar(*minus)) / (2 * h)
        if x.size:
            worst = max(worst, float(rel_error(analytic, numeric).max()))
    return worst


def _ops(rng):
    """(name, fn, inputs) for each differentiable primitive."""
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 5))
    batched = rng.standard_normal((2, 3, 4))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    row = rng.standard_normal((2, 3, 6))
    gain = rng.uniform(0.5, 1.5, 6)
    bias = rng.standard_normal(6)
    return [
        ("add", lambda x, y: ad.add(x, y), [a, rng.standard_normal(4)]),
        ("sub", lambda x, y: ad.sub(x, y), [a, rng.standard_normal((3, 1))]),
        ("mul", lambda x, y: ad.mul(x, y), [a, rng.standard_normal(4)]),
        ("div", lambda x, y: ad.div(x, y), [a, pos]),
        ("pow", lambda x: ad.power(x, 3.0), [a + np.sign(a) * 0.1]),
        ("pow_fractional", lambda x: ad.power(x, 2.5), [pos]),
        ("exp", ad.exp, [a]),
        ("log", ad.log, [pos]),
        ("sqrt", ad.sqrt, [pos]),
        ("relu", ad.relu, [a + np.sign(a) * 0.1]),
        ("gelu", ad.gelu, [a]),
        ("sigmoid", ad.sigmoid, [a]),
        ("log_sigmoid", ad.log_sigmoid, [a]),
        ("sum", lambda x: ad.tsum(x, axis=1), [batched]),
        ("mean", lambda x: ad.mean(x, axis=(0, 2)), [batched]),
        ("max", lambda x: ad.tmax(x, axis=1), [batched]),
        ("reshape", lambda x: ad.reshape(x, (6, 4)), [batched]),
        ("transpose", lambda x: ad.transpose(x, (2, 0, 1)), [batched]),
        ("getitem", lambda x: ad.getitem(x, (slice(None), np.array([0, 2, 2]))), [batched]),
        ("concat", lambda x, y: ad.concat([x, y], axis=0), [a, a[:1] * 2.0]),
        ("matmul", lambda x, y: ad.matmul(x, y), [a, b]),
        ("matmul_batched", lambda x, y: ad.matmul(x, y), [batched, b]),
        ("matmul_row_stable", lambda x, y: ad.matmul(x, y, row_stable=True), [batched, b]),
        ("softmax", lambda x: ad.softmax(x, -1), [batched]),
        ("log_softmax", lambda x: ad.log_softmax(x, -1), [batched]),
        ("layer_norm", lambda x, g, c: ad.layer_norm(x, g, c, 1e-5), [row, gain, bias]),
    ]


def check_ops(h=1e-6, seed=0):
    """``{op_name: max relative error}`` for every primitive, in float64."""
    rng = np.random.default_rng(seed)
    return {name: check_function(fn, inputs, h=h) for name, fn, inputs in _ops(rng)}


GRADCHECK_MODEL = ModelConfig(dim=16, n_heads=2, n_enc_layers=2, n_dec_layers=1, ffn_ratio=2,
                              dropout_p=0.0, droppath_p=0.0, patch_count=8, patch_size=8, dtype="float64")


@dataclass
class ModelCheck:
    max_rel_error: float
    n_coords: int
    errors: np.ndarray


def check_pretrain_graph(n_coords=200, h=1e-4, seed=0, model_cfg=GRADCHECK_MODEL, n_clouds=2, n_points=64):
    """Finite-difference check of the full pretraining loss in float64.

    Samples ``n_coords`` random parameter coordinates of a small model and
    compares the tape gradient with central differences. Masks and queries
    are re-drawn from the same seed on every evaluation, so only the
    perturbed parameter changes between calls.
    """
    from .data import gen_shape, SHAPES

    rng = np.random.default_rng(seed)
    clouds = np.stack([gen_shape(SHAPES[i % 4], n_points, rng, 0.01) for i in range(n_clouds)])
    model = MaskPointModel(model_cfg, seed=seed)
    mask_cfg = MaskConfig(ratio=0.5, n_queries=8, gamma_fps_count=16)
    loss_cfg = LossConfig()

    def loss_value():
        return pretrain_forward(clouds, mask_cfg, model, loss_cfg, np.random.default_rng(seed + 1),
                                training=False)["loss"]

    params = model.parameters()
    with ad.GradTape() as tape:
        loss = loss_value()
    tape.backward(loss)
    names = list(params)
    sizes = np.array([params[n].data.size for n in names])
    picks = rng.choice(sizes.sum(), size=min(n_coords, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    errors = []
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        p = params[names[k]]
        j = np.unravel_index(flat - offsets[k], p.shape)
        analytic = 0.0 if p.grad is None else float(p.grad[j])
        orig = p.data[j]
        p.data[j] = orig + h
        up = loss_value().item()
        p.data[j] = orig - h
        down = loss_value().item()
        p.data[j] = orig
        errors.append(float(rel_error(analytic, (up - down) / (2 * h))))
    errors = np.array(errors)
    return ModelCheck(float(errors.max()), len(errors), errors)
