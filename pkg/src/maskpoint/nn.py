"""Module base class and the basic layers the model is assembled from."""
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    training = True

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return dict(self.named_parameters())

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None


def xavier_uniform(rng, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


class Linear(Module):
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""

    def __init__(self, n_in, n_out, rng, dtype=np.float32, bias=True, row_stable=False):
        self.weight = ad.Parameter(xavier_uniform(rng, n_in, n_out, dtype))
        self.bias = ad.Parameter(np.zeros(n_out, dtype=dtype)) if bias else None
        self.row_stable = row_stable

    def __call__(self, x):
        y = ad.matmul(x, self.weight, row_stable=self.row_stable)
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32, eps=1e-5):
        self.gain = ad.Parameter(np.ones(dim, dtype=dtype))
        self.bias = ad.Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.gain, self.bias, self.eps)


class MLP(Module):
    """Two linear layers with an activation between them."""

    def __init__(self, n_in, n_hidden, n_out, rng, dtype=np.float32, activation="gelu",
                 dropout_p=0.0, row_stable=False):
        self.fc1 = Linear(n_in, n_hidden, rng, dtype, row_stable=row_stable)
        self.fc2 = Linear(n_hidden, n_out, rng, dtype, row_stable=row_stable)
        self.activation = activation
        self.dropout_p = dropout_p

    def __call__(self, x, rng=None):
        h = self.fc1(x)
        h = ad.gelu(h) if self.activation == "gelu" else ad.relu(h)
        h = ad.dropout(h, self.dropout_p, self.training, rng)
        h = self.fc2(h)
        return ad.dropout(h, self.dropout_p, self.training, rng)
