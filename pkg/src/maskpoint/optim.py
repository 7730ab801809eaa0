"""AdamW with decoupled weight decay, and a warmup + cosine learning-rate schedule."""
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamWState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state, lr=None, decay_mask=None):
    """One AdamW update, in place on each ``params[name].data``.

    ``params`` and ``grads`` are dicts keyed by parameter name; a missing or
    ``None`` gradient is treated as zero. ``decay_mask`` maps names to
    whether weight decay applies (default: every parameter). The decay
    ``p -= lr * wd * p`` is applied before, and separately from, the Adam
    step.
    """
    lr = state.lr if lr is None else lr
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        data = p.data
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(data)
            state.v[name] = np.zeros_like(data)
        v = state.v[name]
        if state.weight_decay and (decay_mask is None or decay_mask.get(name, True)):
            data -= (lr * state.weight_decay) * data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(data.dtype, copy=False)


class AdamW:
    """Thin stateful wrapper over :func:`adamw_step` for a ``Module``."""

    def __init__(self, params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.05,
                 decay_mask=None):
        self.params = params
        self.decay_mask = decay_mask
        self.state = AdamWState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                                weight_decay=weight_decay)

    def step(self, lr=None):
        grads = {name: p.grad for name, p in self.params.items()}
        adamw_step(self.params, grads, self.state, lr=lr, decay_mask=self.decay_mask)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def lr_schedule(step, total_steps, warmup_steps, base_lr):
    """Linear warmup from 0 to ``base_lr``, then half-cosine decay to 0 at ``total_steps``."""
    if not 0 <= warmup_steps < total_steps:
        raise ValueError(f"need 0 <= warmup_steps < total_steps, got {warmup_steps}, {total_steps}")
    step = min(max(step, 0), total_steps)
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


def global_grad_norm(params):
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return math.sqrt(total)
