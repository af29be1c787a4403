"""Parameter storage and the sequential network built from a ModelGraph."""

from __future__ import annotations

import numpy as np

from ..errors import GraphValidationError
from . import layers as L
from .graph import ModelGraph

LEARNABLE = ("weight", "bias", "gamma", "beta")
BUFFERS = ("running_mean", "running_var")


class ParameterStore:
    """Named tensors for every layer of a graph, keyed ``"<layer>.<name>"``.

    ``grads`` holds a same-shaped slot for every learnable tensor. Running
    batch-norm statistics are buffers: stored and checkpointed, never
    optimised. ``precision`` records how the values were last stored.
    """

    def __init__(self, tensors: dict[str, np.ndarray], precision: str = "fp32"):
        self.tensors = dict(tensors)
        self.precision = precision
        self.grads = {k: np.zeros_like(v) for k, v in self.tensors.items() if _is_learnable(k)}

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def learnable(self) -> list[str]:
        return [k for k in self.tensors if _is_learnable(k)]

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self.tensors.items()}, self.precision)

    def astype(self, dtype) -> "ParameterStore":
        return ParameterStore({k: v.astype(dtype) for k, v in self.tensors.items()}, self.precision)

    def count(self, learnable_only=True) -> int:
        names = self.learnable() if learnable_only else list(self.tensors)
        return int(sum(self.tensors[k].size for k in names))

    def equal(self, other: "ParameterStore", names=None) -> bool:
        names = list(self.tensors) if names is None else names
        return set(self.tensors) == set(other.tensors) and all(
            self.tensors[k].dtype == other.tensors[k].dtype
            and np.array_equal(self.tensors[k], other.tensors[k])
            for k in names
        )


def _is_learnable(name: str) -> bool:
    return name.rsplit(".", 1)[-1] in LEARNABLE


def tensor_shapes(graph: ModelGraph) -> dict[str, tuple]:
    shapes = {}
    for i, layer in enumerate(graph.layers):
        if layer.kind == "conv2d":
            kf, kt = layer.kernel
            shapes[f"{i}.weight"] = (layer.out_channels, layer.in_channels // layer.groups, kf, kt)
            if layer.bias:
                shapes[f"{i}.bias"] = (layer.out_channels,)
        elif layer.kind == "batchnorm2d":
            c = layer.in_channels
            for name in ("gamma", "beta", "running_mean", "running_var"):
                shapes[f"{i}.{name}"] = (c,)
        elif layer.kind == "linear":
            shapes[f"{i}.weight"] = (layer.out_channels, layer.in_channels)
            if layer.bias:
                shapes[f"{i}.bias"] = (layer.out_channels,)
    return shapes


def init_params(graph: ModelGraph, rng: np.random.Generator, dtype=np.float32) -> ParameterStore:
    """Kaiming-uniform (fan-in) weights, zero biases and BN shift, unit BN scale."""
    tensors = {}
    for name, shape in tensor_shapes(graph).items():
        kind = name.rsplit(".", 1)[1]
        if kind == "weight":
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif kind in ("gamma", "running_var"):
            tensors[name] = np.ones(shape, dtype=dtype)
        else:
            tensors[name] = np.zeros(shape, dtype=dtype)
    return ParameterStore(tensors)


def check_params(graph: ModelGraph, params: ParameterStore) -> None:
    expected = tensor_shapes(graph)
    if set(expected) != set(params.tensors):
        missing = sorted(set(expected) - set(params.tensors))
        extra = sorted(set(params.tensors) - set(expected))
        raise GraphValidationError(f"parameters do not match graph (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise GraphValidationError(f"{name} has shape {params[name].shape}, graph needs {shape}")


class Network:
    """Runs a graph forward and backward against a ParameterStore.

    ``forward(x, train=True)`` keeps the per-layer caches needed by
    ``backward`` (pass ``keep_cache=True`` to differentiate in eval mode);
    gradients are written into ``params.grads`` and also
    returned. Batch-norm running statistics are updated in train mode.
    """

    def __init__(self, graph: ModelGraph, params: ParameterStore):
        check_params(graph, params)
        self.graph = graph
        self.params = params
        self._caches = None
        self.input_grad = None

    def forward(self, x, train=False, keep_cache=None):
        if x.ndim != 4 or x.shape[1:] != self.graph.input_shape:
            raise GraphValidationError(
                f"input shape {x.shape[1:]} does not match graph input {self.graph.input_shape}"
            )
        p = self.params
        caches = []
        for i, layer in enumerate(self.graph.layers):
            kind = layer.kind
            if kind == "conv2d":
                x, c = L.conv2d_forward(
                    x, p[f"{i}.weight"], p.tensors.get(f"{i}.bias"),
                    layer.stride, layer.padding, layer.groups,
                )
            elif kind == "batchnorm2d":
                x, c = L.batchnorm_forward(
                    x, p[f"{i}.gamma"], p[f"{i}.beta"],
                    p[f"{i}.running_mean"], p[f"{i}.running_var"], train,
                )
            elif kind == "relu":
                x, c = L.relu_forward(x)
            elif kind == "avg_pool2d":
                x, c = L.avg_pool_forward(x, layer.kernel, layer.stride)
            elif kind == "global_avg_pool":
                x, c = L.global_avg_pool_forward(x)
            else:
                x, c = L.linear_forward(x, p[f"{i}.weight"], p.tensors.get(f"{i}.bias"))
            caches.append(c)
        keep = train if keep_cache is None else keep_cache
        self._caches = caches if keep else None
        return x

    __call__ = forward

    def backward(self, dout):
        if self._caches is None:
            raise RuntimeError("backward() needs a preceding forward() that kept its caches")
        grads = self.params.grads
        for i in range(len(self.graph.layers) - 1, -1, -1):
            kind = self.graph.layers[i].kind
            cache = self._caches[i]
            if kind == "conv2d" or kind == "linear":
                fn = L.conv2d_backward if kind == "conv2d" else L.linear_backward
                dout, dw, db = fn(dout, cache)
                grads[f"{i}.weight"] = dw
                if db is not None:
                    grads[f"{i}.bias"] = db
            elif kind == "batchnorm2d":
                dout, dg, dbeta = L.batchnorm_backward(dout, cache)
                grads[f"{i}.gamma"] = dg
                grads[f"{i}.beta"] = dbeta
            elif kind == "relu":
                dout = L.relu_backward(dout, cache)
            elif kind == "avg_pool2d":
                dout = L.avg_pool_backward(dout, cache)
            else:
                dout = L.global_avg_pool_backward(dout, cache)
        self._caches = None
        self.input_grad = dout
        return grads

    def predict_logits(self, x, batch_size=64):
        """Eval-mode logits, processed in chunks to bound memory."""
        out = [self.forward(x[s : s + batch_size], train=False) for s in range(0, x.shape[0], batch_size)]
        return np.concatenate(out, axis=0)
