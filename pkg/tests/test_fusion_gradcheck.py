import numpy as np
import pytest

from helpers import kink_free_input, randomize_bn
from scenewise.complexity import count_macs, count_params
from scenewise.errors import FusionUnsupportedError
from scenewise.nn.fusion import fuse_batchnorm
from scenewise.nn.gradcheck import gradient_check
from scenewise.nn.graph import LayerSpec, ModelGraph, desk_graph, reference_graph
from scenewise.nn.layers import softmax_cross_entropy
from scenewise.nn.model import Network, init_params

L = LayerSpec


def test_identity_bn_leaves_conv_weights(rng, mini_graph):
    params = init_params(mini_graph, rng, np.float64)
    fused_graph, fused = fuse_batchnorm(mini_graph, params)
    assert all(layer.kind != "batchnorm2d" for layer in fused_graph.layers)
    # eps shifts the scale by 1/sqrt(1 + 1e-5)
    np.testing.assert_allclose(fused["0.weight"], params["0.weight"], rtol=1e-5)
    np.testing.assert_allclose(fused["0.bias"], 0.0, atol=1e-12)


@pytest.mark.parametrize("make", [lambda: None, desk_graph])
def test_fused_logits_match(rng, mini_graph, make):
    graph = make() or mini_graph
    if graph is not mini_graph:
        graph = graph.with_input((1, 32, 17))
    params = init_params(graph, rng, np.float64)
    randomize_bn(params, rng)
    x = rng.standard_normal((3, *graph.input_shape))
    ref = Network(graph, params).forward(x)
    fused_graph, fused = fuse_batchnorm(graph, params)
    out = Network(fused_graph, fused).forward(x)
    np.testing.assert_allclose(out, ref, rtol=1e-4, atol=1e-8 * np.abs(ref).max())


def test_standalone_bn_is_unsupported(rng):
    graph = ModelGraph((L.batchnorm2d(1), L.global_avg_pool(), L.linear(1, 2)), (1, 4, 4), 2)
    with pytest.raises(FusionUnsupportedError):
        fuse_batchnorm(graph, init_params(graph, rng))


def test_fusion_never_increases_cost(rng):
    graph = reference_graph()
    fused_graph, _ = fuse_batchnorm(graph, init_params(graph, rng))
    assert count_params(fused_graph)[1] < count_params(graph)[1]
    assert count_macs(fused_graph)[1] <= count_macs(graph)[1]


def test_linear_only_gradcheck(rng):
    graph = ModelGraph((L.linear(6, 4),), (1, 2, 3), 4)
    params = init_params(graph, rng)
    x = rng.standard_normal((3, 1, 2, 3))
    err, details = gradient_check(graph, params, x, np.array([0, 3, 1]), include_input=True, return_details=True)
    assert max(details["0.weight"], details["0.bias"]) < 1e-6
    assert details["input"] < 1e-5  # input enters non-linearly, so the h^2 term is larger


@pytest.mark.parametrize("train", [True, False])
def test_mini_stack_gradcheck(rng, mini_graph, train):
    params = init_params(mini_graph, rng)
    randomize_bn(params, rng)
    x = kink_free_input(mini_graph, params, rng, 4, train)
    err, details = gradient_check(mini_graph, params, x, np.array([0, 1, 2, 1]), train=train,
                                  include_input=True, return_details=True)
    assert err < 1e-3
    assert set(details) == set(params.learnable()) | {"input"}


def test_gradcheck_leaves_params_untouched(rng, mini_graph):
    params = init_params(mini_graph, rng)
    before = params.copy()
    gradient_check(mini_graph, params, rng.standard_normal((2, 1, 8, 6)), np.array([0, 1]))
    assert params.equal(before)


def test_degenerate_zero_model_runs(mini_graph):
    params = init_params(mini_graph, np.random.default_rng(0))
    for name in params.tensors:
        if name.endswith(("weight", "bias")):
            params[name] = np.zeros_like(params[name])
    x = np.zeros((2, 1, 8, 6))
    err, details = gradient_check(mini_graph, params, x, np.array([0, 1]), return_details=True)
    assert np.isfinite(err)
    analytic = Network(mini_graph, params.astype(np.float64))
    _, d = softmax_cross_entropy(analytic.forward(x, train=True), np.array([0, 1]))
    grads = analytic.backward(d)
    assert np.all(grads["0.weight"] == 0)
