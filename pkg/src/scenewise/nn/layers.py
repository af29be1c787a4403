"""Forward and backward passes for the supported layer kinds.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``. Activations are laid out as (N, C, F, T). All
functions keep the dtype of their inputs, so the same code runs in float32
for training and float64 for gradient checking.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(x, kernel, stride, padding, groups):
    """Unfold ``x`` to (N, G, Cg * kf * kt, OF * OT)."""
    n, c, f, t = x.shape
    kf, kt = kernel
    sf, st = stride
    pf, pt = padding
    if pf or pt:
        x = np.pad(x, ((0, 0), (0, 0), (pf, pf), (pt, pt)))
    of = conv_output_size(f, kf, sf, pf)
    ot = conv_output_size(t, kt, st, pt)
    if kf == 1 and kt == 1:
        win = x[:, :, : sf * of : sf, : st * ot : st]
        return np.ascontiguousarray(win).reshape(n, groups, c // groups, of * ot), (of, ot)
    win = sliding_window_view(x, (kf, kt), axis=(2, 3))[:, :, ::sf, ::st]
    win = win[:, :, :of, :ot]  # (N, C, OF, OT, kf, kt)
    cols = win.reshape(n, groups, c // groups, of, ot, kf, kt).transpose(0, 1, 2, 5, 6, 3, 4)
    return np.ascontiguousarray(cols).reshape(n, groups, (c // groups) * kf * kt, of * ot), (of, ot)


def _col2im(dcols, x_shape, kernel, stride, padding, groups, out_hw):
    n, c, f, t = x_shape
    kf, kt = kernel
    sf, st = stride
    pf, pt = padding
    of, ot = out_hw
    dcols = dcols.reshape(n, c, kf, kt, of, ot)
    dx = np.zeros((n, c, f + 2 * pf, t + 2 * pt), dtype=dcols.dtype)
    for i in range(kf):
        for j in range(kt):
            dx[:, :, i : i + sf * of : sf, j : j + st * ot : st] += dcols[:, :, i, j]
    return dx[:, :, pf : pf + f, pt : pt + t]


def conv2d_forward(x, w, b, stride=(1, 1), padding=(0, 0), groups=1):
    """Grouped 2-D cross-correlation with zero padding.

    ``w`` has shape (C_out, C_in // groups, kf, kt); ``b`` is (C_out,) or None.
    """
    n = x.shape[0]
    c_out, cg, kf, kt = w.shape
    cols, (of, ot) = _im2col(x, (kf, kt), stride, padding, groups)
    wg = w.reshape(groups, c_out // groups, cg * kf * kt)
    out = np.matmul(wg[None], cols).reshape(n, c_out, of, ot)
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    cache = (x.shape, cols, w, b is not None, stride, padding, groups, (of, ot))
    return out, cache


def conv2d_backward(dout, cache):
    """Returns ``(dx, dw, db)``; ``db`` is None for bias-free convolutions."""
    x_shape, cols, w, has_bias, stride, padding, groups, out_hw = cache
    n = dout.shape[0]
    c_out, cg, kf, kt = w.shape
    d = dout.reshape(n, groups, c_out // groups, out_hw[0] * out_hw[1])
    dw = np.matmul(d, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
    wg = w.reshape(groups, c_out // groups, cg * kf * kt)
    dcols = np.matmul(wg.transpose(0, 2, 1)[None], d)
    dx = _col2im(dcols, x_shape, (kf, kt), stride, padding, groups, out_hw)
    db = dout.sum(axis=(0, 2, 3)) if has_bias else None
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """Per-channel batch normalisation.

    In train mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance, PyTorch
    convention). In eval mode the running statistics are used.
    """
    axes = (0, 2, 3)
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = x.size // x.shape[1]
        unbiased = var * (m / max(m - 1, 1))
        running_mean *= 1 - momentum
        running_mean += momentum * mean.astype(running_mean.dtype)
        running_var *= 1 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    out = xhat * gamma.reshape(1, -1, 1, 1) + beta.reshape(1, -1, 1, 1)
    return out, (xhat, gamma, inv_std, train)


def batchnorm_backward(dout, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, gamma, inv_std, train = cache
    axes = (0, 2, 3)
    dbeta = dout.sum(axis=axes)
    dgamma = (dout * xhat).sum(axis=axes)
    g = (gamma * inv_std).reshape(1, -1, 1, 1)
    if not train:
        return dout * g, dgamma, dbeta
    m = dout.size // dout.shape[1]
    dx = g / m * (
        m * dout - dbeta.reshape(1, -1, 1, 1) - xhat * dgamma.reshape(1, -1, 1, 1)
    )
    return dx, dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, cache):
    return dout * cache


def avg_pool_forward(x, kernel, stride):
    kf, kt = kernel
    sf, st = stride
    n, c, f, t = x.shape
    of = (f - kf) // sf + 1
    ot = (t - kt) // st + 1
    win = sliding_window_view(x, (kf, kt), axis=(2, 3))[:, :, ::sf, ::st][:, :, :of, :ot]
    out = win.mean(axis=(4, 5))
    return out, (x.shape, kernel, stride, (of, ot))


def avg_pool_backward(dout, cache):
    x_shape, (kf, kt), (sf, st), (of, ot) = cache
    dx = np.zeros(x_shape, dtype=dout.dtype)
    share = dout / (kf * kt)
    for i in range(kf):
        for j in range(kt):
            dx[:, :, i : i + sf * of : sf, j : j + st * ot : st] += share
    return dx


def global_avg_pool_forward(x):
    return x.mean(axis=(2, 3), keepdims=True), x.shape


def global_avg_pool_backward(dout, cache):
    n, c, f, t = cache
    return np.broadcast_to(dout / (f * t), cache).copy()


def linear_forward(x, w, b):
    """``w`` has shape (out, in); inputs are flattened past the batch axis."""
    flat = x.reshape(x.shape[0], -1)
    out = flat @ w.T
    if b is not None:
        out = out + b
    return out, (x.shape, flat, w, b is not None)


def linear_backward(dout, cache):
    x_shape, flat, w, has_bias = cache
    dx = (dout @ w).reshape(x_shape)
    dw = dout.T @ flat
    db = dout.sum(axis=0) if has_bias else None
    return dx, dw, db


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,) or (labels.size and (labels.min() < 0 or labels.max() >= k)):
        raise ValueError(f"labels must be {n} integers in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad
