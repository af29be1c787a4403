import json
from dataclasses import replace

import numpy as np
import pytest

from scenewise.data.manifest import DeviceRegistry, build_registry
from scenewise.errors import (
    BankError, BudgetError, CheckpointError, ConfigurationError, DataError, NonFiniteError, RegistryError,
)
from scenewise.nn.checkpoint import dequantize_load, quantize_store
from scenewise.nn.graph import LayerSpec, ModelGraph, factorized_cnn
from scenewise.nn.model import init_params
from scenewise.training import (
    PRESETS, TrainConfig, TrainLog, _stream, build_bank, compute_features, finetune_device, load_bank,
    save_bank, train_general, validation_split,
)

from conftest import FAST


def test_config_defaults_and_presets():
    cfg = TrainConfig()
    assert (cfg.epochs_general, cfg.epochs_device, cfg.batch_size) == (150, 50, 256)
    assert cfg.device_lr == pytest.approx(0.1 * cfg.lr_general)
    desk = PRESETS["desk"]
    assert (desk.epochs_general, desk.epochs_device, desk.batch_size) == (15, 5, 32)
    assert PRESETS["paper"] == cfg


@pytest.mark.parametrize("kw", [
    {"epochs_general": -1}, {"batch_size": 0}, {"lr_general": 0.01, "lr_device": 0.02},
    {"precision": "fp8"}, {"validation_fraction": 1.0},
])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kw)


def test_features_shape(tiny_dataset, feats):
    assert feats.shape == (len(tiny_dataset.train), 1, 256, 65)
    assert feats.dtype == np.float32


def test_features_parallel_identical(tiny_dataset, feats):
    assert np.array_equal(compute_features(tiny_dataset.train, workers=3), feats)


def test_validation_split_keeps_parallel_recordings_together(tiny_dataset):
    m = tiny_dataset.train
    tr, va = validation_split(m, 0.25, 1)
    assert len(va) and len(tr) + len(va) == len(m)
    key = lambda i: (m[i].scene_label, m[i].identifier)
    assert not {key(i) for i in tr} & {key(i) for i in va}
    # every scene contributes to validation
    assert {m[i].scene_label for i in va} == set(m.labels)


def test_zero_epochs_is_initialization(tiny_dataset, small_graph, feats):
    cfg = replace(FAST, epochs_general=0, precision="fp32")
    result = train_general(tiny_dataset.train, small_graph, cfg, features=feats)
    init = init_params(small_graph, _stream(cfg, 0x1817))
    assert result.params.equal(init)
    assert result.log.records == []


def test_training_reduces_loss(general):
    losses = general.log.losses()
    assert len(losses) == FAST.epochs_general
    assert losses[-1] < losses[0]


def test_general_stored_at_fp16(general):
    p = general.params
    for v in p.tensors.values():
        assert v.dtype == np.float32
        assert np.array_equal(v, v.astype(np.float16).astype(np.float32))


def test_same_seed_same_trajectory(tiny_dataset, small_graph, feats, general):
    again = train_general(tiny_dataset.train, small_graph, FAST, features=feats)
    assert again.log.losses() == general.log.losses()
    assert again.params.equal(general.params)
    other = train_general(tiny_dataset.train, small_graph, replace(FAST, seed=4), features=feats)
    assert other.log.losses() != general.log.losses()


def test_log_file_records(tmp_path, tiny_dataset, small_graph, feats):
    path = tmp_path / "log.jsonl"
    train_general(tiny_dataset.train, small_graph, replace(FAST, epochs_general=1), features=feats, log_path=path)
    rec = json.loads(path.read_text().splitlines()[0])
    assert {"stage", "epoch", "step", "lr", "loss", "train_acc", "val_acc", "time_s"} <= set(rec)
    assert rec["stage"] == "general" and rec["epoch"] == 1


def test_zero_lr_finetune_keeps_weights(tiny_dataset, small_graph, feats, general):
    cfg = replace(FAST, lr_device=0.0, precision="fp32")
    registry = build_registry(tiny_dataset.train)
    dev = finetune_device(general.params, "b", tiny_dataset.train, cfg, small_graph, registry, features=feats)
    assert dev.params.equal(general.params, names=general.params.learnable())
    # BN running statistics do move in train mode
    assert not dev.params.equal(general.params)


def test_finetune_leaves_general_untouched(tiny_dataset, small_graph, feats, general):
    before = general.params.copy()
    registry = build_registry(tiny_dataset.train)
    dev = finetune_device(general.params, "s1", tiny_dataset.train, FAST, small_graph, registry, features=feats)
    assert general.params.equal(before)
    assert not dev.params.equal(before)
    assert {r["device"] for r in dev.log.records} == {"s1"}


def test_finetune_unknown_device(tiny_dataset, small_graph, general):
    registry = build_registry(tiny_dataset.train)
    with pytest.raises(RegistryError, match="s4"):
        finetune_device(general.params, "s4", tiny_dataset.train, FAST, small_graph, registry)


def test_finetune_empty_subset(tiny_dataset, small_graph, general):
    registry = DeviceRegistry(("a", "zz"))
    with pytest.raises(DataError, match="zz"):
        finetune_device(general.params, "zz", tiny_dataset.train, FAST, small_graph, registry)


def test_non_finite_loss_reports_position(tiny_dataset, small_graph, feats):
    bad = feats.copy()
    bad[:] = np.nan
    with pytest.raises(NonFiniteError, match=r"epoch 1, batch 1, lr"):
        train_general(tiny_dataset.train, small_graph, FAST, features=bad)


def test_over_budget_graph_rejected(tiny_dataset, feats):
    def one_conv(width):
        return ModelGraph((LayerSpec.conv2d(1, width, 3, 1, 1), LayerSpec.relu(), LayerSpec.global_avg_pool(),
                           LayerSpec.linear(width, 4)), (1, 256, 65), 4)

    train_general(tiny_dataset.train, one_conv(4), replace(FAST, epochs_general=0), features=feats)
    huge = one_conv(256)  # 256 * 256 * 65 * 9 = 38.3 M MACs
    with pytest.raises(BudgetError, match="macs"):
        train_general(tiny_dataset.train, huge, replace(FAST, epochs_general=0), features=feats)


def test_class_count_mismatch(tiny_dataset, feats):
    with pytest.raises(DataError):
        train_general(tiny_dataset.train, factorized_cnn((8, 8, 8), 8, (2, 2, 2), classes=10), FAST, features=feats)


def test_bank_has_one_plus_k_checkpoints(tmp_path, bank):
    assert bank.registry.k == 6
    save_bank(bank, tmp_path / "bank")
    files = sorted(p.name for p in (tmp_path / "bank").iterdir())
    assert files == sorted(["bank.meta", "general.ckpt"] + [f"device_{d}.ckpt" for d in bank.registry.known_devices])
    assert all(r.passed for r in bank.audits().values()) and len(bank.audits()) == 7


def test_bank_round_trip(tmp_path, bank):
    save_bank(bank, tmp_path / "bank")
    back = load_bank(tmp_path / "bank")
    assert back.graph == bank.graph and back.classes == bank.classes
    assert back.registry == bank.registry and back.provenance == bank.provenance
    assert back.general.equal(bank.general)
    assert all(back.devices[d].equal(bank.devices[d]) for d in bank.devices)
    # saving again over an existing bank replaces it
    save_bank(back, tmp_path / "bank")
    assert load_bank(tmp_path / "bank").general.equal(bank.general)


def test_general_only_bank(tmp_path, bank):
    only = build_bank(bank.general, {}, None, bank.graph, bank.classes)
    save_bank(only, tmp_path / "g")
    back = load_bank(tmp_path / "g")
    assert back.devices == {} and back.route("b") == "general"


def test_routing(bank):
    assert bank.route("a") == "device_a"
    assert bank.route("unknown") == "general"
    assert bank.route("s5") == "general"
    assert bank.general_only().route("b") == "general"


def test_bank_errors(bank):
    with pytest.raises(BankError):
        build_bank(None, {}, bank.registry, bank.graph, bank.classes)
    with pytest.raises(BankError, match="s4"):
        build_bank(bank.general, {"s4": bank.general}, bank.registry, bank.graph, bank.classes)


def test_tampered_checkpoint_named(tmp_path, bank):
    save_bank(bank, tmp_path / "bank")
    target = tmp_path / "bank" / "device_c.ckpt"
    blob = bytearray(target.read_bytes())
    blob[:4] = b"EVIL"
    target.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="device_c.ckpt"):
        load_bank(tmp_path / "bank")


def test_missing_pieces(tmp_path, bank):
    save_bank(bank, tmp_path / "bank")
    (tmp_path / "bank" / "general.ckpt").unlink()
    with pytest.raises(BankError, match="general"):
        load_bank(tmp_path / "bank")
    with pytest.raises(BankError, match="bank.meta"):
        load_bank(tmp_path / "nowhere")


def test_store_round_trip_matches_quantization(general):
    p = general.params
    assert dequantize_load(quantize_store(p, "fp16")).equal(p)
