"""Two-stage training: a general model, then one fine-tuned copy per device."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import read_wav
from .complexity import Budget, audit
from .data.manifest import DeviceRegistry, Manifest
from .errors import (
    BankError, BudgetError, CheckpointError, ConfigurationError, DataError, NonFiniteError, ScenewiseError,
)
from .frontend import FrontendConfig, compute_mel
from .nn.checkpoint import dequantize_load, load_checkpoint, quantize_store, save_checkpoint
from .nn.graph import ModelGraph, parse_graph
from .nn.layers import softmax_cross_entropy
from .nn.mixstyle import FreqMixStyleConfig, freq_mixstyle
from .nn.model import Network, ParameterStore, check_params, init_params
from .nn.optim import AdamWState, adamw_step, warmup_cosine

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs_general: int = 150
    epochs_device: int = 50
    batch_size: int = 256
    lr_general: float = 0.005
    lr_device: float | None = None  # defaults to 0.1 * lr_general
    weight_decay: float = 0.004
    warmup_frac: float = 0.1
    final_lr_frac: float = 0.01
    mixstyle_alpha: float = 0.3
    mixstyle_probability: float = 0.4
    mixstyle_in_finetune: bool = False
    validation_fraction: float = 0.1
    seed: int = 1234
    precision: str = "fp16"

    def __post_init__(self):
        if self.epochs_general < 0 or self.epochs_device < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.lr_general < 0 or self.device_lr < 0:
            raise ConfigurationError("learning rates must be >= 0")
        if self.device_lr > self.lr_general:
            raise ConfigurationError("stage-2 learning rate must not exceed the stage-1 learning rate")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must be in [0, 1)")
        if self.precision not in ("fp16", "fp32"):
            raise ConfigurationError("precision must be fp16 or fp32")

    @property
    def device_lr(self) -> float:
        return 0.1 * self.lr_general if self.lr_device is None else self.lr_device

    @property
    def mixstyle(self) -> FreqMixStyleConfig:
        return FreqMixStyleConfig(self.mixstyle_alpha, self.mixstyle_probability)

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


PRESETS = {
    "paper": TrainConfig(),
    "desk": TrainConfig(epochs_general=15, epochs_device=5, batch_size=32),
}


# ----------------------------------------------------------------------------
# features


def compute_features(manifest: Manifest, frontend: FrontendConfig | None = None, workers=1, strict=True):
    """Log-mel inputs of shape (N, 1, mel_bins, frames) in manifest order.

    With ``strict=False`` unreadable entries are skipped and returned as a
    list of ``(index, message)``; the array then only holds readable entries
    and ``ok`` lists their indices.
    """
    frontend = frontend or FrontendConfig()

    def one(entry):
        try:
            return compute_mel(read_wav(manifest.path_of(entry)), frontend).values.astype(np.float32)
        except ScenewiseError as exc:
            if strict:
                raise
            return exc

    entries = list(manifest)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            mels = list(pool.map(one, entries))
    else:
        mels = [one(e) for e in entries]
    failures = [(i, str(m)) for i, m in enumerate(mels) if isinstance(m, Exception)]
    ok = [i for i, m in enumerate(mels) if not isinstance(m, Exception)]
    shapes = {mels[i].shape for i in ok}
    if len(shapes) > 1:
        raise DataError(f"clips produce different feature shapes {sorted(shapes)}; use equal-length clips")
    x = np.stack([mels[i] for i in ok])[:, None] if ok else np.zeros((0, 1, frontend.mel_bins, 1), np.float32)
    if strict:
        return x
    return x, ok, failures


def label_indices(manifest: Manifest, classes) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([index[e.scene_label] for e in manifest], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"scene label {exc.args[0]!r} is not one of the model classes") from None


def validation_split(manifest: Manifest, fraction, seed):
    """Indices (train, validation), stratified by (scene, device).

    Recordings sharing an identifier (the same source captured by several
    devices) fall on the same side, so parallel recordings do not leak into
    validation. Entries without an identifier form their own group.
    """
    if fraction <= 0:
        return np.arange(len(manifest)), np.arange(0)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A1]))
    groups = {}
    for i, e in enumerate(manifest):
        key = (e.scene_label, e.identifier if e.identifier else f"#{i}")
        groups.setdefault(key, []).append(i)
    by_scene = {}
    for scene, ident in groups:
        by_scene.setdefault(scene, []).append(ident)
    val = []
    for scene in sorted(by_scene):
        idents = sorted(by_scene[scene])
        n_val = int(round(fraction * len(idents)))
        for j in rng.choice(len(idents), size=n_val, replace=False):
            val += groups[(scene, idents[j])]
    val_set = set(val)
    train = [i for i in range(len(manifest)) if i not in val_set]
    return np.array(train, dtype=np.int64), np.array(sorted(val), dtype=np.int64)


# ----------------------------------------------------------------------------
# training loop


class TrainLog:
    """Append-only JSON-lines record of training progress."""

    def __init__(self, path=None):
        self.records = []
        self.path = Path(path) if path is not None else None

    def append(self, record: dict):
        self.records.append(record)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        log.info(
            "%s epoch %d: loss %.4f acc %.3f val_acc %s lr %.2e",
            record.get("stage"), record["epoch"], record["loss"], record["train_acc"],
            "n/a" if record.get("val_acc") is None else f"{record['val_acc']:.3f}", record["lr"],
        )

    def losses(self):
        return [r["loss"] for r in self.records]


def accuracy(net: Network, x, y, batch_size=64):
    if len(y) == 0:
        return None
    logits = net.predict_logits(x, batch_size)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def run_epochs(net: Network, x, y, epochs, batch_size, peak_lr, cfg: TrainConfig, rng, mixstyle,
               train_log: TrainLog, stage, device=None, x_val=None, y_val=None):
    """AdamW over shuffled mini-batches with the warmup + cosine schedule."""
    n = len(y)
    steps_per_epoch = math.ceil(n / batch_size)
    total = epochs * steps_per_epoch
    state = AdamWState(weight_decay=cfg.weight_decay)
    params = net.params
    step = 0
    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        lr = peak_lr
        for b in range(steps_per_epoch):
            idx = order[b * batch_size : (b + 1) * batch_size]
            xb = x[idx]
            if mixstyle is not None:
                xb = freq_mixstyle(xb, mixstyle, rng)
            lr = warmup_cosine(step, total, peak_lr, cfg.warmup_frac, cfg.final_lr_frac)
            logits = net.forward(xb, train=True)
            loss, dlogits = softmax_cross_entropy(logits, y[idx])
            if not np.isfinite(loss):
                raise NonFiniteError(
                    f"non-finite loss in {stage} (device {device}): epoch {epoch + 1}, batch {b + 1}, lr {lr:.3e}"
                )
            grads = net.backward(dlogits)
            adamw_step(state, params, grads, lr)
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y[idx]))
            step += 1
        record = {
            "stage": stage,
            "device": device,
            "epoch": epoch + 1,
            "step": step,
            "lr": lr,
            "loss": loss_sum / n,
            "train_acc": correct / n,
            "val_acc": accuracy(net, x_val, y_val) if x_val is not None else None,
            "time_s": round(time.perf_counter() - t0, 3),
        }
        train_log.append(record)
    return params


def _stream(cfg: TrainConfig, *key):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, *key]))


def _store(params: ParameterStore, graph: ModelGraph, precision, label):
    """Quantize to the storage precision and enforce the budget."""
    report = audit(graph, precision=precision, label=label)
    if params.count() != report.total_params:
        raise BudgetError(f"{label}: checkpoint holds {params.count()} parameters, graph needs {report.total_params}")
    if not report.passed:
        raise BudgetError(f"{label}: complexity budget violated ({', '.join(report.violations)})", report)
    return dequantize_load(quantize_store(params, precision))


@dataclass
class StageResult:
    params: ParameterStore
    log: TrainLog


def train_general(train_manifest: Manifest, graph: ModelGraph, cfg: TrainConfig, classes=None,
                  features=None, log_path=None, train_log=None) -> StageResult:
    """Stage 1: train on every device with Freq-MixStyle.

    Returns the checkpoint as stored (rounded to ``cfg.precision``) and the
    per-epoch log. ``features`` may carry precomputed inputs in manifest order.
    """
    classes = list(classes or train_manifest.labels)
    if len(classes) != graph.class_count:
        raise DataError(f"manifest has {len(classes)} scene classes, graph outputs {graph.class_count}")
    x = compute_features(train_manifest) if features is None else features
    y = label_indices(train_manifest, classes)
    tr, va = validation_split(train_manifest, cfg.validation_fraction, cfg.seed)
    train_log = train_log or TrainLog(log_path)
    params = init_params(graph, _stream(cfg, 0x1817))
    audit_report = audit(graph, precision=cfg.precision)
    if not audit_report.passed:
        raise BudgetError(f"graph violates the complexity budget ({', '.join(audit_report.violations)})", audit_report)
    net = Network(graph, params)
    run_epochs(
        net, x[tr], y[tr], cfg.epochs_general, cfg.batch_size, cfg.lr_general, cfg,
        _stream(cfg, 0x5701), cfg.mixstyle, train_log, "general",
        x_val=x[va] if len(va) else None, y_val=y[va] if len(va) else None,
    )
    return StageResult(_store(params, graph, cfg.precision, "general"), train_log)


def finetune_device(general: ParameterStore, device_id, train_manifest: Manifest, cfg: TrainConfig,
                    graph: ModelGraph, registry: DeviceRegistry, classes=None, features=None,
                    log_path=None, train_log=None) -> StageResult:
    """Stage 2: fine-tune a copy of the general model on one device's clips."""
    registry.require(device_id)
    classes = list(classes or train_manifest.labels)
    mask = np.array([e.device_id == device_id for e in train_manifest], dtype=bool)
    if not mask.any():
        raise DataError(f"no training clips for device {device_id!r}")
    subset = train_manifest.filter(lambda e: e.device_id == device_id)
    x_all = compute_features(subset) if features is None else features[mask]
    y_all = label_indices(subset, classes)
    tr, va = validation_split(subset, cfg.validation_fraction, cfg.seed)
    params = general.copy()
    net = Network(graph, params)
    train_log = train_log or TrainLog(log_path)
    dev_idx = registry.known_devices.index(device_id)
    run_epochs(
        net, x_all[tr], y_all[tr], cfg.epochs_device, cfg.batch_size, cfg.device_lr, cfg,
        _stream(cfg, 0x5702, dev_idx), cfg.mixstyle if cfg.mixstyle_in_finetune else None,
        train_log, "device", device_id,
        x_val=x_all[va] if len(va) else None, y_val=y_all[va] if len(va) else None,
    )
    return StageResult(_store(params, graph, cfg.precision, f"device_{device_id}"), train_log)


# ----------------------------------------------------------------------------
# model bank


@dataclass
class ModelBank:
    """General checkpoint plus one checkpoint per known device, sharing a graph."""

    graph: ModelGraph
    classes: list
    general: ParameterStore
    devices: dict = field(default_factory=dict)
    registry: DeviceRegistry | None = None
    precision: str = "fp16"
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    provenance: dict = field(default_factory=dict)

    def route(self, device_id) -> str:
        return f"device_{device_id}" if device_id in self.devices else "general"

    def model(self, route: str) -> ParameterStore:
        return self.general if route == "general" else self.devices[route[len("device_"):]]

    def general_only(self) -> "ModelBank":
        return replace(self, devices={})

    def audits(self, budget: Budget | None = None):
        out = {"general": audit(self.graph, self.precision, budget=budget, label="general")}
        for dev in self.devices:
            out[f"device_{dev}"] = audit(self.graph, self.precision, budget=budget, label=f"device_{dev}")
        return out


def build_bank(general, device_checkpoints: dict, registry: DeviceRegistry, graph: ModelGraph, classes,
               precision="fp16", frontend=None, provenance=None, budget: Budget | None = None) -> ModelBank:
    if general is None:
        raise BankError("a model bank needs a general checkpoint")
    if registry is None and device_checkpoints:
        raise BankError("device checkpoints need a device registry")
    for dev in device_checkpoints:
        if not registry.is_known(dev):
            raise BankError(f"device checkpoint for unregistered device {dev!r}")
    for name, params in [("general", general)] + [(f"device_{d}", p) for d, p in device_checkpoints.items()]:
        try:
            check_params(graph, params)
        except ScenewiseError as exc:
            raise BankError(f"{name}: {exc}") from None
        report = audit(graph, precision, budget=budget, label=name)
        if params.count() != report.total_params or not report.passed:
            raise BudgetError(f"{name}: fails the complexity budget ({', '.join(report.violations)})", report)
    return ModelBank(
        graph, list(classes), general, dict(device_checkpoints), registry, precision,
        frontend or FrontendConfig(), dict(provenance or {}),
    )


BANK_META = "bank.meta"


def save_bank(bank: ModelBank, path) -> Path:
    """Write the bank directory atomically (staged, then renamed into place)."""
    path = Path(path)
    stage = path.with_name(path.name + ".staging")
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    save_checkpoint(bank.general, stage / "general.ckpt", bank.precision)
    for dev, params in bank.devices.items():
        save_checkpoint(params, stage / f"device_{dev}.ckpt", bank.precision)
    fe = asdict(bank.frontend)
    meta = {
        "format": "scenewise-bank",
        "version": 1,
        "graph": bank.graph.to_text(),
        "classes": bank.classes,
        "devices": list(bank.devices),
        "known_devices": list(bank.registry.known_devices) if bank.registry else list(bank.devices),
        "precision": bank.precision,
        "frontend": fe,
        "provenance": bank.provenance,
    }
    (stage / BANK_META).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if path.exists():
        old = path.with_name(path.name + ".old")
        if old.exists():
            shutil.rmtree(old)
        os.replace(path, old)
        os.replace(stage, path)
        shutil.rmtree(old)
    else:
        os.replace(stage, path)
    return path


def load_bank(path) -> ModelBank:
    """Load and validate every member before returning; any failure names the file."""
    path = Path(path)
    meta_path = path / BANK_META
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        graph = parse_graph(meta["graph"], meta_path)
        classes = list(meta["classes"])
        devices = list(meta["devices"])
        known = tuple(meta["known_devices"])
        precision = meta["precision"]
        frontend = FrontendConfig(**meta["frontend"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise BankError(f"{meta_path}: cannot read bank metadata ({exc})") from None
    general_path = path / "general.ckpt"
    if not general_path.exists():
        raise BankError(f"{general_path}: missing general checkpoint")
    general = load_checkpoint(general_path)
    device_params = {dev: load_checkpoint(path / f"device_{dev}.ckpt") for dev in devices}
    for name, params in [("general.ckpt", general)] + [(f"device_{d}.ckpt", p) for d, p in device_params.items()]:
        try:
            check_params(graph, params)
        except ScenewiseError as exc:
            raise CheckpointError(str(exc), path / name) from None
    try:
        registry = DeviceRegistry(known) if known else None
    except ScenewiseError as exc:
        raise BankError(f"{meta_path}: {exc}") from None
    return build_bank(general, device_params, registry, graph, classes, precision, frontend, meta.get("provenance"))
