"""A small dense tensor engine with tape-based reverse-mode differentiation.

Operations record themselves onto the innermost active :class:`GradTape`
when at least one input requires a gradient. Outside a tape nothing is
recorded, which is how inference runs::

    with GradTape() as tape:
        loss = (w * x).sum()
    tape.backward(loss)      # fills w.grad

Tensors wrap numpy arrays. Constants mixed into an op are cast to the
tensor's dtype, so float32 graphs stay float32.
"""
import threading

import numpy as np
from scipy.special import erf

from . import kernels
from .errors import InputError, NonFiniteError

CHECK_FINITE = True

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of differentiable operations.

    Records are appended in execution order, which is a topological order of
    the graph; :meth:`backward` walks them in reverse exactly once and then
    clears the tape.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().remove(self)
        return False

    def record(self, out, parents, backward_fn):
        out._node = len(self.records)
        self.records.append((out, parents, backward_fn))

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
        if loss.data.size != 1:
            raise InputError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._node is None or loss._node >= len(self.records) or self.records[loss._node][0] is not loss:
            raise InputError("loss was not produced on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        for out, parents, backward_fn in reversed(self.records[: loss._node + 1]):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._node is None:  # leaf
                    parent.grad = pg.astype(parent.data.dtype, copy=True) if parent.grad is None else parent.grad + pg
                else:
                    key = id(parent)
                    grads[key] = pg if key not in grads else grads[key] + pg
        self.records.clear()


def backward(tape, loss):
    tape.backward(loss)


class Tensor:
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._node = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return tmax(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def Parameter(data, name=None):
    return Tensor(np.array(data), requires_grad=True, name=name)


def _lift(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn, op):
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {op}")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, backward_fn)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b):
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent):
    """``a ** exponent`` for a constant real exponent."""
    exponent = float(exponent)
    if exponent == 0.0:
        return _make(np.ones_like(a.data), (a,), lambda g: (None,), "pow")
    out = a.data ** exponent
    return _make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1.0),), "pow")


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def relu(a):
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_SQRT1_2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def gelu(a):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF from ``erf``."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT1_2))
    out = x * cdf

    def backward_fn(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _make(out.astype(x.dtype, copy=False), (a,), backward_fn, "gelu")


def sigmoid(a):
    x = a.data
    out = np.exp(-np.logaddexp(0.0, -x)).astype(x.dtype, copy=False)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(a):
    """``log(sigmoid(x))`` without overflow for large |x|."""
    x = a.data
    out = -np.logaddexp(0.0, -x).astype(x.dtype, copy=False)
    return _make(out, (a,), lambda g: (g * np.exp(-np.logaddexp(0.0, x)),), "log_sigmoid")


# ----------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), backward_fn, "sum")


def mean(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def tmax(a, axis=None, keepdims=False):
    """Max along ``axis``; the gradient goes to the first maximal entry."""
    if axis is None:
        flat = reshape(a, (-1,))
        return tmax(flat, 0, keepdims=False)
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(a.data, idx_k, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis)

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx_k, g, axis=axis)
        return (full,)

    return _make(out, (a,), backward_fn, "max")


def tmin(a, axis=None, keepdims=False):
    return neg(tmax(neg(a), axis, keepdims))


# -------------------------------------------------------------------- shaping


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, key):
    if isinstance(key, Tensor):
        key = key.data

    def backward_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(a.data[key], (a,), backward_fn, "getitem")


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    axis = axis % tensors[0].ndim
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), backward_fn, "concat")


# ------------------------------------------------------------------ products


def matmul(a, b, row_stable=False):
    """Matrix product over the last two axes with numpy broadcasting.

    With ``row_stable=True`` (``b`` must be 2-D) each output row is computed
    independently of the other rows, so results are bit-identical whatever
    other rows share the call.
    """
    a, b = _lift(a), _lift(b, a)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise InputError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if row_stable:
        if b.ndim != 2:
            raise InputError("row_stable matmul needs a 2-D right operand")
        lead = a.shape[:-1]
        out = kernels.row_matmul(a.data.reshape(-1, a.shape[-1]), b.data).reshape(*lead, b.shape[1])
    else:
        out = a.data @ b.data

    def backward_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward_fn, "matmul")


# ------------------------------------------------------------- fused kernels


def softmax(a, axis=-1):
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward_fn, "softmax")


def log_softmax(a, axis=-1):
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward_fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), backward_fn, "log_softmax")


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean and unit variance, then ``gain * . + bias``."""
    data = x.data
    mu = data.mean(axis=-1, keepdims=True)
    xc = data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward_fn(g):
        gx_hat = g * gain.data
        n = data.shape[-1]
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True) / n)
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _make(out, (x, gain, bias), backward_fn, "layer_norm")


# ------------------------------------------------------------------ stochastic


def dropout(x, p, training, rng):
    """Inverted dropout: zero with probability ``p``, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise InputError(f"dropout p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return mul(x, keep.astype(x.dtype))


def droppath(branch, p, training, rng):
    """Stochastic depth: drop the whole residual branch per sample (axis 0)."""
    if not 0.0 <= p < 1.0:
        raise InputError(f"droppath p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return branch
    shape = (branch.shape[0],) + (1,) * (branch.ndim - 1)
    keep = (rng.random(shape) >= p).astype(branch.dtype) / (1.0 - p)
    return mul(branch, keep.astype(branch.dtype))
