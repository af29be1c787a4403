"""Shared test utilities."""

from contextlib import contextmanager

import numpy as np

from scenewise.nn import layers as L


def randomize_bn(params, rng):
    """Non-trivial affine and running statistics for every batch-norm layer."""
    for name in params.tensors:
        if name.endswith(("gamma", "running_var")):
            params[name] = rng.uniform(0.5, 2.0, params[name].shape).astype(params[name].dtype)
        elif name.endswith(("beta", "running_mean")):
            params[name] = rng.normal(0.0, 0.5, params[name].shape).astype(params[name].dtype)


def _apply(layer, i, p, h, train):
    if layer.kind == "conv2d":
        return L.conv2d_forward(h, p[f"{i}.weight"], p.tensors.get(f"{i}.bias"),
                                layer.stride, layer.padding, layer.groups)[0]
    if layer.kind == "batchnorm2d":
        return L.batchnorm_forward(h, p[f"{i}.gamma"], p[f"{i}.beta"], p[f"{i}.running_mean"].copy(),
                                   p[f"{i}.running_var"].copy(), train)[0]
    if layer.kind == "relu":
        return L.relu_forward(h)[0]
    if layer.kind == "avg_pool2d":
        return L.avg_pool_forward(h, layer.kernel, layer.stride)[0]
    if layer.kind == "global_avg_pool":
        return L.global_avg_pool_forward(h)[0]
    return L.linear_forward(h, p[f"{i}.weight"], p.tensors.get(f"{i}.bias"))[0]


def min_relu_margin(graph, params, x, train):
    """Smallest |activation| entering any ReLU."""
    p = params.astype(np.float64)
    h = np.asarray(x, dtype=np.float64)
    margin = np.inf
    for i, layer in enumerate(graph.layers):
        if layer.kind == "relu":
            margin = min(margin, float(np.abs(h).min()))
        h = _apply(layer, i, p, h, train)
    return margin


def kink_free_input(graph, params, rng, batch, train, margin=5e-3, tries=2000):
    """Random batch whose pre-ReLU activations all stay ``margin`` away from zero.

    Central differences are only valid where the loss is smooth, so a
    perturbation of size h must not flip any ReLU.
    """
    for _ in range(tries):
        x = rng.standard_normal((batch, *graph.input_shape)).astype(np.float32)
        if min_relu_margin(graph, params, x, train) > margin:
            return x
    raise RuntimeError("no kink-free input found")


ACCEPTANCE = {}  # criterion number -> (PASS/FAIL, description)


@contextmanager
def criterion(number, text):
    """Record and print the outcome of one acceptance criterion."""
    try:
        yield
    except BaseException:
        ACCEPTANCE[number] = ("FAIL", text)
        print(f"criterion {number}: FAIL  {text}")
        raise
    ACCEPTANCE[number] = ("PASS", text)
    print(f"criterion {number}: PASS  {text}")
