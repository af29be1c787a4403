import time

import numpy as np
import pytest

from scenewise.data.devices import default_profiles
from scenewise.data.manifest import build_registry
from scenewise.data.synth import SplitSpec, synth_generate
from scenewise.nn.graph import LayerSpec, ModelGraph, factorized_cnn
from scenewise.training import TrainConfig, build_bank, compute_features, finetune_device, train_general


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mini_graph():
    """conv-bn-relu-pool-linear stack small enough for finite differences."""
    L = LayerSpec
    layers = (
        L.conv2d(1, 4, (3, 3), (1, 1), (1, 1)),
        L.batchnorm2d(4),
        L.relu(),
        L.conv2d(4, 4, (3, 1), (2, 1), (1, 0), groups=2),
        L.avg_pool2d(2),
        L.global_avg_pool(),
        L.linear(4, 3),
    )
    return ModelGraph(layers, (1, 8, 6), 3)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_synth")
    return synth_generate(11, 4, default_profiles(11), split_spec=SplitSpec(4, 2), out_dir=root)


DESK_SEED = 20250601


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """10 scenes, 6 known + 3 unknown devices, 40 training clips per scene-device cell."""
    root = tmp_path_factory.mktemp("desk_synth")
    t0 = time.perf_counter()
    ds = synth_generate(DESK_SEED, 10, default_profiles(DESK_SEED), split_spec=SplitSpec(40, 20), out_dir=root)
    ds.elapsed_s = time.perf_counter() - t0
    return ds


FAST = TrainConfig(epochs_general=2, epochs_device=1, batch_size=16, lr_general=0.01, seed=3)


@pytest.fixture(scope="session")
def small_graph():
    return factorized_cnn((8, 8, 8), 8, (2, 2, 2), classes=4)


@pytest.fixture(scope="session")
def feats(tiny_dataset):
    return compute_features(tiny_dataset.train)


@pytest.fixture(scope="session")
def general(tiny_dataset, small_graph, feats):
    return train_general(tiny_dataset.train, small_graph, FAST, features=feats)


@pytest.fixture(scope="session")
def bank(tiny_dataset, small_graph, feats, general):
    registry = build_registry(tiny_dataset.train)
    devices = {
        d: finetune_device(general.params, d, tiny_dataset.train, FAST, small_graph, registry, features=feats).params
        for d in registry.known_devices
    }
    return build_bank(general.params, devices, registry, small_graph, tiny_dataset.train.labels,
                      provenance={"seed": FAST.seed, "config_hash": FAST.fingerprint()})


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, text = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {text}")
