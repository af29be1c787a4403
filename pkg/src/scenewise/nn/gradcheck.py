"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .layers import softmax_cross_entropy
from .model import Network, ParameterStore


def relative_error(analytic, numeric, floor=1e-8):
    """Element-wise ``|a - n| / max(|a| + |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)


def numeric_gradient(f, x, h=1e-3):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (in place)."""
    grad = np.zeros(x.shape, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        plus = f()
        x[idx] = old - h
        minus = f()
        x[idx] = old
        grad[idx] = (plus - minus) / (2.0 * h)
    return grad


def gradient_check(graph, params: ParameterStore, x, labels, h=1e-3, train=True, include_input=False,
                   return_details=False):
    """Max relative error between backprop and central differences.

    Runs in float64 on copies of ``params`` and ``x``. Batch-norm layers use
    batch statistics when ``train`` is set; running statistics are restored
    before every evaluation so each loss evaluation sees the same state.
    With ``include_input`` the gradient w.r.t. ``x`` is checked as well,
    reported under the name ``"input"``.
    """
    p64 = params.astype(np.float64)
    x64 = np.array(x, dtype=np.float64)
    buffers = {k: v.copy() for k, v in p64.tensors.items() if k not in p64.grads}
    net = Network(graph, p64)

    def loss():
        for k, v in buffers.items():
            p64.tensors[k][...] = v
        return softmax_cross_entropy(net.forward(x64, train=train), labels)[0]

    for k, v in buffers.items():
        p64.tensors[k][...] = v
    logits = net.forward(x64, train=train, keep_cache=True)
    _, dlogits = softmax_cross_entropy(logits, labels)
    analytic = {k: g.copy() for k, g in net.backward(dlogits).items()}
    names = p64.learnable()
    targets = {name: p64.tensors[name] for name in names}
    if include_input:
        analytic["input"] = net.input_grad.copy()
        targets["input"] = x64
    details = {}
    worst = 0.0
    for name, target in targets.items():
        numeric = numeric_gradient(loss, target, h)
        err = float(relative_error(analytic[name], numeric).max()) if numeric.size else 0.0
        details[name] = err
        worst = max(worst, err)
    return (worst, details) if return_details else worst
