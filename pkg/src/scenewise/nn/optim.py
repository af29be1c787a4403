"""AdamW with decoupled weight decay and a warmup + cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteError


def warmup_cosine(step: int, total_steps: int, peak_lr: float, warmup_frac=0.1, final_frac=0.01) -> float:
    """Learning rate for 0-based ``step``.

    Linear warmup over the first ``warmup_frac`` of training, then cosine
    decay from ``peak_lr`` to ``final_frac * peak_lr`` at the last step.
    """
    if total_steps <= 0:
        return peak_lr
    warmup = int(math.ceil(warmup_frac * total_steps))
    if step < warmup:
        return peak_lr * (step + 1) / warmup
    decay_steps = max(total_steps - warmup - 1, 1)
    progress = min((step - warmup) / decay_steps, 1.0)
    floor = final_frac * peak_lr
    return floor + 0.5 * (peak_lr - floor) * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamWState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.004
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def ensure(self, params) -> None:
        for name in params.learnable():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])


def adamw_step(state: AdamWState, params, grads, lr: float) -> None:
    """One in-place AdamW update of every learnable tensor in ``params``.

    Raises NonFiniteError naming the first tensor whose gradient contains
    NaN or Inf; nothing is modified in that case.
    """
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    names = params.learnable()
    for name in names:
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteError(f"non-finite gradient in tensor {name!r} at step {state.step + 1}")
    state.ensure(params)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name in names:
        p, g = params[name], grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr == 0.0:
            continue
        if state.weight_decay:
            p *= 1.0 - lr * state.weight_decay
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
