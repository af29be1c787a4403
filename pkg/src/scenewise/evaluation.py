"""Device-routed inference, challenge metrics and prediction files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data.manifest import DeviceRegistry, Manifest
from .errors import FormatError, MetricError
from .nn.layers import softmax
from .nn.model import Network
from .training import ModelBank, compute_features

PROB_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    file: str
    device_id: str | None
    route: str
    probabilities: np.ndarray
    classes: tuple

    @property
    def predicted_index(self) -> int:
        return int(np.argmax(self.probabilities))  # first maximum wins ties

    @property
    def predicted(self) -> str:
        return self.classes[self.predicted_index]


@dataclass
class Predictions:
    """Records in manifest order, plus entries that could not be processed."""

    records: list
    failures: list = field(default_factory=list)  # (filename, message)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


def route_and_predict(bank: ModelBank, manifest: Manifest, features=None, workers=1) -> Predictions:
    """Run each entry through the model its device routes to.

    Entries whose device has a checkpoint in the bank use it; every other
    device (including ``unknown``) uses the general model. Each clip is
    forwarded on its own, so its output does not depend on which other clips
    share its route. Unreadable audio is reported in ``failures``.
    """
    if features is None:
        features, ok, failed = compute_features(manifest, bank.frontend, workers=workers, strict=False)
        failures = [(manifest[i].filename, msg) for i, msg in failed]
    else:
        ok = list(range(len(manifest)))
        failures = []
    classes = tuple(bank.classes)
    nets = {}
    records = []
    for row, i in enumerate(ok):
        entry = manifest[i]
        route = bank.route(entry.device_id)
        if route not in nets:
            nets[route] = Network(bank.graph, bank.model(route))
        logits = nets[route].forward(features[row : row + 1], train=False)
        probs = softmax(logits.astype(np.float64))[0]
        records.append(PredictionRecord(entry.filename, entry.device_id, route, probs, classes))
    return Predictions(records, failures)


def _truth(records, manifest: Manifest):
    labels = manifest.label_of()
    pairs = []
    for r in records:
        if r.file not in labels:
            raise MetricError(f"{r.file}: not in the reference manifest")
        truth = labels[r.file]
        if truth is None:
            raise MetricError(f"{r.file}: reference manifest has no scene label")
        pairs.append((r, truth))
    if not pairs:
        raise MetricError("no labeled records to score")
    return pairs


def class_recalls(records, manifest: Manifest) -> dict:
    """Recall per ground-truth class present among the records."""
    hits, totals = {}, {}
    for r, truth in _truth(records, manifest):
        totals[truth] = totals.get(truth, 0) + 1
        hits[truth] = hits.get(truth, 0) + (r.predicted == truth)
    return {c: hits[c] / totals[c] for c in sorted(totals)}


def macro_accuracy(records, manifest: Manifest) -> float:
    """Unweighted mean of per-class recalls; absent classes are skipped."""
    recalls = class_recalls(records, manifest)
    return sum(recalls.values()) / len(recalls)


def micro_accuracy(records, manifest: Manifest) -> float:
    pairs = _truth(records, manifest)
    return sum(r.predicted == t for r, t in pairs) / len(pairs)


def cross_entropy_metric(records, manifest: Manifest) -> float:
    """Mean ``-log p(true class)`` with probabilities floored at 1e-12."""
    pairs = _truth(records, manifest)
    total = 0.0
    for r, truth in pairs:
        if truth not in r.classes:
            raise MetricError(f"{r.file}: label {truth!r} is not a model class")
        p = float(r.probabilities[r.classes.index(truth)])
        total += -math.log(max(p, PROB_FLOOR))
    return total / len(pairs)


@dataclass
class MetricsReport:
    macro_accuracy: float
    cross_entropy: float
    per_class_recall: dict
    per_device_accuracy: dict  # micro: fraction correct within the device's clips
    per_device_macro: dict
    counts: dict

    @property
    def mean_over_devices(self) -> float:
        vals = list(self.per_device_accuracy.values())
        return sum(vals) / len(vals)

    def to_dict(self) -> dict:
        return {
            "macro_over_classes": self.macro_accuracy,
            "mean_over_devices": self.mean_over_devices,
            "cross_entropy": self.cross_entropy,
            "per_class_recall": self.per_class_recall,
            "per_device_accuracy": self.per_device_accuracy,
            "per_device_macro_accuracy": self.per_device_macro,
            "counts": self.counts,
        }


def evaluate(records, manifest: Manifest, devices=None) -> MetricsReport:
    records = list(records)
    device_of = {e.filename: e.device_id for e in manifest}
    by_device = {}
    for r in records:
        by_device.setdefault(device_of.get(r.file, r.device_id), []).append(r)
    order = devices or sorted(by_device)
    return MetricsReport(
        macro_accuracy(records, manifest),
        cross_entropy_metric(records, manifest),
        class_recalls(records, manifest),
        {d: micro_accuracy(by_device[d], manifest) for d in order if d in by_device},
        {d: macro_accuracy(by_device[d], manifest) for d in order if d in by_device},
        {d: len(by_device[d]) for d in order if d in by_device},
    )


@dataclass
class DeviceTable:
    devices: list
    known: list
    rows: dict  # row name -> MetricsReport

    def render(self) -> str:
        name_w = max([len("Model")] + [len(n) for n in self.rows])
        cols = [d.upper() for d in self.devices]
        widths = [max(6, len(c)) for c in cols]
        head = f"{'Model':<{name_w}}  " + "  ".join(f"{c:>{w}}" for c, w in zip(cols, widths))
        head += "  Macro Avg. Accuracy"
        lines = [head, "-" * len(head)]
        for name, rep in self.rows.items():
            cells = [
                f"{100 * rep.per_device_accuracy[d]:>{w}.2f}" if d in rep.per_device_accuracy else f"{'-':>{w}}"
                for d, w in zip(self.devices, widths)
            ]
            lines.append(f"{name:<{name_w}}  " + "  ".join(cells) + f"  {100 * rep.macro_accuracy:>19.2f}")
        return "\n".join(lines) + "\n"

    def known_mean(self, row) -> float:
        acc = self.rows[row].per_device_accuracy
        vals = [acc[d] for d in self.known if d in acc]
        return sum(vals) / len(vals) if vals else float("nan")

    def to_dict(self) -> dict:
        return {
            "devices": self.devices,
            "known_devices": self.known,
            "rows": {name: rep.to_dict() for name, rep in self.rows.items()},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def device_table(rows: dict, manifest: Manifest, registry: DeviceRegistry) -> DeviceTable:
    """Table-1 style comparison: one accuracy column per test device.

    ``rows`` maps a model-configuration name to its prediction records.
    Columns list known devices first, then the unseen ones.
    """
    devices = registry.order(manifest.devices)
    reports = {name: evaluate(recs, manifest, devices) for name, recs in rows.items()}
    return DeviceTable(devices, [d for d in devices if registry.is_known(d)], reports)


def emit_submission(records, path) -> Path:
    """TSV with filename, predicted label and one probability column per class."""
    records = list(records)
    if not records:
        raise MetricError("no predictions to write")
    classes = records[0].classes
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["filename", "scene_label", *classes])
        for r in records:
            writer.writerow([r.file, r.predicted, *(repr(float(p)) for p in r.probabilities)])
    return path


def load_submission(path, manifest: Manifest | None = None) -> list[PredictionRecord]:
    """Read a submission file back into records (device taken from ``manifest``)."""
    path = Path(path)
    try:
        rows = list(csv.reader(path.read_text(encoding="utf-8").splitlines(), delimiter="\t"))
    except OSError as exc:
        raise FormatError(f"cannot read submission ({exc.strerror})", path=path) from None
    if not rows or rows[0][:2] != ["filename", "scene_label"]:
        raise FormatError("expected header 'filename<TAB>scene_label<TAB><classes...>'", line=1, path=path)
    classes = tuple(rows[0][2:])
    device_of = {e.filename: e.device_id for e in manifest} if manifest is not None else {}
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(classes) + 2:
            raise FormatError(f"expected {len(classes) + 2} fields, got {len(row)}", line=lineno, path=path)
        try:
            probs = np.array([float(v) for v in row[2:]])
        except ValueError:
            raise FormatError("non-numeric probability", line=lineno, path=path) from None
        records.append(PredictionRecord(row[0], device_of.get(row[0]), "file", probs, classes))
    return records
