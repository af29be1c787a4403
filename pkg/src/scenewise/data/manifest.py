"""TAU-style TSV manifests and the known-device registry."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

from ..errors import FormatError, RegistryError

UNKNOWN_DEVICE = "unknown"
COLUMNS = ("filename", "scene_label", "identifier", "source_label")
REQUIRED = {"train": ("filename", "scene_label", "source_label"), "test": ("filename", "source_label")}


@dataclass(frozen=True)
class RecordingEntry:
    filename: str
    scene_label: str | None
    device_id: str
    identifier: str | None = None

    def __post_init__(self):
        if not self.device_id:
            raise FormatError("device_id must be non-empty")

    @property
    def city(self) -> str | None:
        if not self.identifier:
            return None
        return self.identifier.rsplit("-", 1)[0] if "-" in self.identifier else self.identifier

    @property
    def is_unknown_device(self) -> bool:
        return self.device_id == UNKNOWN_DEVICE


class Manifest:
    """Ordered recording entries plus the directory relative paths resolve against."""

    def __init__(self, entries, kind="train", root=None):
        self.entries = list(entries)
        self.kind = kind
        self.root = Path(root) if root is not None else None
        if kind == "train":
            missing = [i for i, e in enumerate(self.entries) if e.scene_label is None]
            if missing:
                raise FormatError(f"training entry {missing[0]} has no scene_label")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def labels(self) -> list[str]:
        return sorted({e.scene_label for e in self.entries if e.scene_label is not None})

    @property
    def devices(self) -> list[str]:
        return sorted({e.device_id for e in self.entries}, key=device_sort_key)

    @property
    def is_labeled(self) -> bool:
        return bool(self.entries) and all(e.scene_label is not None for e in self.entries)

    def path_of(self, entry: RecordingEntry) -> Path:
        p = Path(entry.filename)
        return p if p.is_absolute() or self.root is None else self.root / p

    def filter(self, predicate) -> "Manifest":
        return Manifest([e for e in self.entries if predicate(e)], self.kind, self.root)

    def for_device(self, device_id) -> "Manifest":
        return self.filter(lambda e: e.device_id == device_id)

    def label_of(self) -> dict[str, str | None]:
        return {e.filename: e.scene_label for e in self.entries}


def load_manifest(path, kind="train") -> Manifest:
    """Read a tab-separated manifest with a header row.

    Train manifests need ``filename``, ``scene_label`` and ``source_label``
    (the device); test manifests need ``filename`` and ``source_label``.
    ``identifier`` (``<city>-<index>``) is optional everywhere.
    """
    if kind not in REQUIRED:
        raise ValueError(f"kind must be 'train' or 'test', got {kind!r}")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read manifest ({exc.strerror})", path=path) from None
    rows = list(csv.reader(text.splitlines(), delimiter="\t"))
    if not rows:
        raise FormatError("empty manifest", path=path)
    header = [h.strip() for h in rows[0]]
    for col in REQUIRED[kind]:
        if col not in header:
            raise FormatError(f"missing required column {col!r}", line=1, path=path)
    col = {name: header.index(name) for name in COLUMNS if name in header}
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} fields, got {len(row)}", line=lineno, path=path)

        def get(name):
            value = row[col[name]].strip() if name in col else ""
            return value or None

        for required in REQUIRED[kind]:
            if get(required) is None:
                raise FormatError(f"missing value for column {required!r}", line=lineno, path=path)
        entries.append(RecordingEntry(get("filename"), get("scene_label"), get("source_label"), get("identifier")))
    if not entries:
        raise FormatError("manifest has no entries", path=path)
    return Manifest(entries, kind, path.parent)


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(COLUMNS)
        for e in manifest.entries:
            writer.writerow([e.filename, e.scene_label or "", e.identifier or "", e.device_id])


@dataclass(frozen=True)
class DeviceRegistry:
    """The K known devices, i.e. those seen in training."""

    known_devices: tuple[str, ...]

    def __post_init__(self):
        if not self.known_devices:
            raise RegistryError("a registry needs at least one known device")
        if UNKNOWN_DEVICE in self.known_devices:
            raise RegistryError(f"{UNKNOWN_DEVICE!r} cannot be a known device")

    @property
    def k(self) -> int:
        return len(self.known_devices)

    def is_known(self, device_id) -> bool:
        return device_id in self.known_devices

    def require(self, device_id) -> None:
        if not self.is_known(device_id):
            raise RegistryError(
                f"device {device_id!r} was not seen in training (known: {', '.join(self.known_devices)})"
            )

    def order(self, devices) -> list[str]:
        """Known devices first (registry order), then the rest sorted."""
        devices = set(devices)
        known = [d for d in self.known_devices if d in devices]
        return known + sorted(devices - set(known), key=device_sort_key)


def device_sort_key(device_id: str):
    """Natural order, so that s2 sorts before s10."""
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", device_id)]


def build_registry(train_manifest: Manifest) -> DeviceRegistry:
    return DeviceRegistry(tuple(sorted({e.device_id for e in train_manifest.entries}, key=device_sort_key)))
