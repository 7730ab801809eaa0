"""Binary checkpoint format.

Layout (little-endian)::

    b"MPT1"  u32 version  u32 tensor_count
    per tensor: u32 name_len, name (UTF-8), u32 rank, u32 dims[rank], float32 data
    u64 blob_len, blob (UTF-8 JSON: model config, step, seed, extras)

Tensors are written in model parameter order; the JSON blob uses sorted
keys, so saving the same checkpoint twice gives identical bytes.
"""
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigMismatchError, FormatError
from .model import MaskPointModel, ModelConfig

MAGIC = b"MPT1"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict  # name -> float32 ndarray
    model_config: ModelConfig
    step: int = 0
    seed: int = 0
    version: int = VERSION
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model, step=0, seed=0, extra=None):
        params = {name: p.data.astype(np.float32, copy=True) for name, p in model.parameters().items()}
        return cls(params, model.cfg, step, seed, VERSION, dict(extra or {}))

    def to_model(self, dtype=None):
        cfg = self.model_config
        if dtype is not None:
            cfg = ModelConfig(**{**asdict(cfg), "dtype": np.dtype(dtype).name})
        model = MaskPointModel(cfg, seed=0)
        load_into(model, self.params)
        return model


def load_into(model, params):
    """Copy ``params`` into ``model``; names and shapes must match exactly."""
    own = model.parameters()
    missing = sorted(set(own) - set(params))
    unexpected = sorted(set(params) - set(own))
    if missing or unexpected:
        raise ConfigMismatchError(f"parameter mismatch: missing={missing} unexpected={unexpected}")
    for name, p in own.items():
        src = np.asarray(params[name])
        if src.shape != p.shape:
            raise ConfigMismatchError(f"shape mismatch for {name}: checkpoint {src.shape}, model {p.shape}")
        p.data = src.astype(p.dtype, copy=True)
        p.grad = None


def dumps(ckpt):
    out = [MAGIC, struct.pack("<II", ckpt.version, len(ckpt.params))]
    for name, arr in ckpt.params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    blob = json.dumps({
        "format_version": ckpt.version,
        "model_config": asdict(ckpt.model_config),
        "step": ckpt.step,
        "seed": ckpt.seed,
        "extra": ckpt.extra,
    }, sort_keys=True).encode("utf-8")
    out.append(struct.pack("<Q", len(blob)))
    out.append(blob)
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}", self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(buf):
    r = _Reader(bytes(buf))
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic bytes; not a checkpoint", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    (count,) = r.unpack("<I", "tensor count")
    params = {}
    for _ in range(count):
        start = r.pos
        (name_len,) = r.unpack("<I", "name length")
        try:
            name = r.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid UTF-8", start + 4) from None
        if name in params:
            raise FormatError(f"duplicate tensor {name!r}", start)
        (rank,) = r.unpack("<I", "rank")
        dims = r.unpack(f"<{rank}I", "dims")
        n = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * n, f"data of {name!r}"), dtype="<f4").reshape(dims)
        params[name] = data.astype(np.float32)
    (blob_len,) = r.unpack("<Q", "config length")
    blob_at = r.pos
    try:
        meta = json.loads(r.take(blob_len, "config blob").decode("utf-8"))
        cfg = ModelConfig(**meta["model_config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad config blob: {exc}", blob_at) from None
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes after config blob", r.pos)
    return Checkpoint(params, cfg, meta.get("step", 0), meta.get("seed", 0), version, meta.get("extra", {}))


def save_checkpoint(ckpt, path):
    with open(path, "wb") as f:
        f.write(dumps(ckpt))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return loads(f.read())
