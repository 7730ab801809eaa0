"""Flat ``key = value`` run configuration files.

Keys mirror :class:`~maskpoint.pipeline.TrainConfig`; nested fields use a
dotted prefix (``model.dim``, ``mask.ratio``, ``loss.focal_alpha``,
``data.n_train``). Blank lines and ``#`` comments are ignored. The resolved
configuration is written back in the same format, so a run manifest can be
passed as ``--config`` to repeat the run.
"""
from dataclasses import fields, is_dataclass, replace

from .errors import InputError, ParseError
from .pipeline import TrainConfig

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def parse_config(text):
    """``{key: raw string value}`` in file order; duplicate keys are an error."""
    out = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(line_no, 1, f"expected 'key = value', got {body!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if not key:
            raise ParseError(line_no, 1, "empty key")
        if not value:
            raise ParseError(line_no, line.index("=") + 2, f"empty value for {key!r}")
        if key in out:
            raise ParseError(line_no, 1, f"duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(key, raw, current):
    if isinstance(current, bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise InputError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError:
        raise InputError(f"{key}: expected {type(current).__name__}, got {raw!r}") from None
    return raw


def config_keys(cfg=None):
    """Every settable key with its current value, nested fields dotted."""
    cfg = TrainConfig() if cfg is None else cfg
    keys = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if is_dataclass(value):
            for g in fields(value):
                keys[f"{f.name}.{g.name}"] = getattr(value, g.name)
        else:
            keys[f.name] = value
    return keys


def apply_config(values, cfg=None):
    """A new ``TrainConfig`` with ``values`` (raw strings or typed) applied over ``cfg``."""
    cfg = TrainConfig() if cfg is None else cfg
    known = config_keys(cfg)
    top, nested = {}, {}
    for key, raw in values.items():
        if key not in known:
            raise InputError(f"unknown config key {key!r}")
        value = _coerce(key, raw, known[key]) if isinstance(raw, str) else raw
        if "." in key:
            group, name = key.split(".", 1)
            nested.setdefault(group, {})[name] = value
        else:
            top[key] = value
    for group, changes in nested.items():
        top[group] = replace(getattr(cfg, group), **changes)
    return replace(cfg, **top)


def load_config(path, cfg=None):
    with open(path, encoding="utf-8") as f:
        return apply_config(parse_config(f.read()), cfg)


def format_config(cfg):
    """All keys of ``cfg`` as ``key = value`` lines, in declaration order."""
    lines = []
    for key, value in config_keys(cfg).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
