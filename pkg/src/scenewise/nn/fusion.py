"""Fold batch-norm layers into the convolutions that precede them."""

from __future__ import annotations

import numpy as np

from ..errors import FusionUnsupportedError
from .graph import LayerSpec, ModelGraph
from .model import ParameterStore

BN_EPS = 1e-5


def fuse_batchnorm(graph: ModelGraph, params: ParameterStore, eps=BN_EPS):
    """Return an equivalent (graph, params) without batch-norm layers.

    Uses the running statistics, so the result matches the original in eval
    mode. Every batchnorm2d must directly follow a conv2d.
    """
    layers = []
    tensors = {}
    index_map = {}
    i = 0
    n = len(graph.layers)
    while i < n:
        layer = graph.layers[i]
        if layer.kind == "batchnorm2d":
            raise FusionUnsupportedError(f"batchnorm2d at layer {i} is not preceded by a conv2d")
        new_idx = len(layers)
        if layer.kind == "conv2d" and i + 1 < n and graph.layers[i + 1].kind == "batchnorm2d":
            w = params[f"{i}.weight"].astype(np.float64)
            b = params.tensors.get(f"{i}.bias")
            b = np.zeros(w.shape[0]) if b is None else b.astype(np.float64)
            j = i + 1
            gamma = params[f"{j}.gamma"].astype(np.float64)
            beta = params[f"{j}.beta"].astype(np.float64)
            mean = params[f"{j}.running_mean"].astype(np.float64)
            var = params[f"{j}.running_var"].astype(np.float64)
            scale = gamma / np.sqrt(var + eps)
            dtype = params[f"{i}.weight"].dtype
            tensors[f"{new_idx}.weight"] = (w * scale[:, None, None, None]).astype(dtype)
            tensors[f"{new_idx}.bias"] = ((b - mean) * scale + beta).astype(dtype)
            layers.append(LayerSpec.conv2d(
                layer.in_channels, layer.out_channels, layer.kernel,
                layer.stride, layer.padding, layer.groups, bias=True,
            ))
            index_map[i] = index_map[j] = new_idx
            i += 2
            continue
        for name, value in params.tensors.items():
            idx, key = name.split(".", 1)
            if int(idx) == i:
                tensors[f"{new_idx}.{key}"] = value.copy()
        layers.append(layer)
        index_map[i] = new_idx
        i += 1
    fused = ModelGraph(tuple(layers), graph.input_shape, graph.class_count)
    return fused, ParameterStore(tensors, params.precision)
