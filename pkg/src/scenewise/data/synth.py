"""Seeded desk-scale stand-in for a multi-device scene dataset.

Every scene is a noise floor with a scene-specific spectral tilt, 3-5
resonant peaks and one amplitude-modulated tone. A source recording is drawn
once per (scene, index) and rendered through every device profile, the way
the simulated devices of the real corpus were derived from reference-device
recordings.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..audio import AudioClip, write_wav
from ..errors import ConfigurationError
from .devices import SyntheticDeviceProfile, apply_device_ir, save_profiles
from .manifest import Manifest, RecordingEntry, write_manifest

SCENE_NAMES = (
    "airport", "bus", "metro", "metro_station", "park",
    "public_square", "shopping_mall", "street_pedestrian", "street_traffic", "tram",
)
SAMPLE_RATE = 32000
CITY = "synth"


@dataclass(frozen=True)
class SceneProfile:
    scene_label: str
    peaks: tuple  # (center_hz, width_octaves, gain_db)
    floor_tilt_db_per_octave: float
    tone_hz: float
    mod_hz: float


@dataclass(frozen=True)
class Variability:
    """Per-clip randomness; larger values make the task harder."""

    peak_shift_octaves: float = 0.08
    peak_gain_jitter_db: float = 3.0
    distractor_peaks: int = 2
    distractor_gain_db: tuple = (6.0, 14.0)
    tone_level_db: tuple = (-14.0, -4.0)
    level_jitter_db: float = 4.0
    tilt_jitter_db: float = 1.0


@dataclass(frozen=True)
class SplitSpec:
    train_per_cell: int = 40
    test_per_cell: int = 20
    unknown_test_per_cell: int | None = None
    train_devices: tuple | None = None  # defaults to every known profile

    def __post_init__(self):
        if self.train_per_cell < 1 or self.test_per_cell < 0:
            raise ConfigurationError("clips per cell must be positive")
        if self.unknown_test_per_cell is not None and self.unknown_test_per_cell < 0:
            raise ConfigurationError("unknown_test_per_cell must be >= 0")

    @property
    def unknown_per_cell(self) -> int:
        return self.test_per_cell if self.unknown_test_per_cell is None else self.unknown_test_per_cell


@dataclass
class SynthDataset:
    root: Path
    train: Manifest
    test: Manifest
    profiles: list
    scenes: list = field(default_factory=list)

    def summary(self) -> str:
        lines = [f"dataset: {self.root}"]
        for name, man in (("train", self.train), ("test", self.test)):
            counts = {}
            for e in man:
                counts[e.device_id] = counts.get(e.device_id, 0) + 1
            per_dev = ", ".join(f"{d}={counts[d]}" for d in man.devices)
            lines.append(f"{name}: {len(man)} clips, {len(man.labels)} scenes; per device: {per_dev}")
        return "\n".join(lines)


def make_scene_profiles(seed, scene_count) -> list[SceneProfile]:
    if scene_count < 2:
        raise ConfigurationError("need at least two scenes")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5CE4E]))
    names = SCENE_NAMES if scene_count <= len(SCENE_NAMES) else [f"scene{i}" for i in range(scene_count)]
    scenes = []
    for label in names[:scene_count]:
        n_peaks = int(rng.integers(3, 6))
        centers = np.sort(np.exp(rng.uniform(np.log(100.0), np.log(10000.0), n_peaks)))
        peaks = tuple(
            (float(c), float(rng.uniform(0.15, 0.4)), float(rng.uniform(12.0, 20.0))) for c in centers
        )
        scenes.append(SceneProfile(
            label, peaks,
            float(rng.uniform(-4.0, 1.0)),
            float(np.exp(rng.uniform(np.log(200.0), np.log(4000.0)))),
            float(rng.uniform(0.5, 8.0)),
        ))
    return scenes


def _bump(freqs, center, width):
    d = np.log2(np.maximum(freqs, 1.0) / center) / width
    return np.exp(-0.5 * d * d)


def render_source(scene: SceneProfile, rng: np.random.Generator, var: Variability = Variability(),
                  n_samples=SAMPLE_RATE, sample_rate=SAMPLE_RATE, return_parts=False):
    """One reference-device recording of ``scene``.

    With ``return_parts`` also returns the noise-floor component alone (same
    noise realisation), for checking that the scene peaks stand out.
    """
    freqs = np.fft.rfftfreq(n_samples, 1.0 / sample_rate)
    octaves = np.log2(np.maximum(freqs, 20.0) / 1000.0)
    tilt = scene.floor_tilt_db_per_octave + rng.normal(0.0, var.tilt_jitter_db)
    floor_power = 10.0 ** (tilt * octaves / 10.0)
    peak_power = np.zeros_like(freqs)
    for center, width, gain in scene.peaks:
        c = center * 2.0 ** rng.uniform(-var.peak_shift_octaves, var.peak_shift_octaves)
        g = gain + rng.uniform(-var.peak_gain_jitter_db, var.peak_gain_jitter_db)
        peak_power += 10.0 ** (g / 10.0) * _bump(freqs, c, width) * 10.0 ** (tilt * np.log2(c / 1000.0) / 10.0)
    for _ in range(var.distractor_peaks):
        c = float(np.exp(rng.uniform(np.log(100.0), np.log(10000.0))))
        g = rng.uniform(*var.distractor_gain_db)
        peak_power += 10.0 ** (g / 10.0) * _bump(freqs, c, rng.uniform(0.15, 0.4)) * 10.0 ** (tilt * np.log2(c / 1000.0) / 10.0)
    noise = (rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size)) / np.sqrt(2.0)
    noise[0] = 0.0
    floor = np.fft.irfft(noise * np.sqrt(floor_power), n=n_samples)
    full = np.fft.irfft(noise * np.sqrt(floor_power + peak_power), n=n_samples)
    t = np.arange(n_samples) / sample_rate
    tone_hz = scene.tone_hz * 2.0 ** rng.uniform(-0.03, 0.03)
    mod = 1.0 + 0.8 * np.sin(2 * np.pi * scene.mod_hz * t + rng.uniform(0, 2 * np.pi))
    tone = np.sin(2 * np.pi * tone_hz * t + rng.uniform(0, 2 * np.pi)) * mod
    rms = np.sqrt(np.mean(full**2))
    tone *= rms * 10.0 ** (rng.uniform(*var.tone_level_db) / 20.0) * np.sqrt(2.0)
    scale = 0.05 * 10.0 ** (rng.uniform(-var.level_jitter_db, var.level_jitter_db) / 20.0) / rms
    signal = (full + tone) * scale
    if return_parts:
        return signal, floor * scale
    return signal


def _clip_rng(seed, split, scene_idx, src_idx):
    return np.random.default_rng(np.random.SeedSequence([seed, split, scene_idx, src_idx]))


def synth_generate(seed, scene_count, profiles, clips_per_cell=None, split_spec: SplitSpec | None = None,
                   out_dir=None, variability: Variability | None = None) -> SynthDataset:
    """Generate audio and train/test manifests under ``out_dir``.

    Known profiles appear in both splits, unknown ones only in test.
    ``clips_per_cell`` overrides ``split_spec.train_per_cell``. Output is a
    pure function of the arguments.
    """
    if out_dir is None:
        raise ConfigurationError("out_dir is required")
    split = split_spec or SplitSpec()
    if clips_per_cell is not None:
        split = SplitSpec(clips_per_cell, split.test_per_cell, split.unknown_test_per_cell, split.train_devices)
    var = variability or Variability()
    profiles = list(profiles)
    ids = [p.device_id for p in profiles]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate device ids in profiles")
    if not any(p.is_identity for p in profiles):
        raise ConfigurationError("the identity (reference device) profile is required")
    known = [p for p in profiles if p.is_known]
    unknown = [p for p in profiles if not p.is_known]
    if not known or not unknown:
        raise ConfigurationError("need at least one known and one unknown device profile")
    if split.train_devices is not None:
        by_id = {p.device_id: p for p in profiles}
        bad = [d for d in split.train_devices if d not in by_id or not by_id[d].is_known]
        if bad:
            raise ConfigurationError(f"devices {bad} cannot be used for training (unknown or undefined)")
        train_devs = [by_id[d] for d in split.train_devices]
    else:
        train_devs = known

    scenes = make_scene_profiles(seed, scene_count)
    root = Path(out_dir)
    (root / "audio").mkdir(parents=True, exist_ok=True)

    def render(split_code, scene_idx, src_idx, devices):
        scene = scenes[scene_idx]
        src = AudioClip(render_source(scene, _clip_rng(seed, split_code, scene_idx, src_idx), var), SAMPLE_RATE)
        out = []
        for prof in devices:
            name = f"audio/{scene.scene_label}-{CITY}-{src_idx}-{prof.device_id}.wav"
            write_wav(root / name, apply_device_ir(src, prof))
            out.append(RecordingEntry(name, scene.scene_label, prof.device_id, f"{CITY}-{src_idx}"))
        return out

    train_entries = []
    for s in range(scene_count):
        for i in range(split.train_per_cell):
            train_entries += render(0, s, i, train_devs)
    test_entries = []
    n_test = max(split.test_per_cell, split.unknown_per_cell)
    for s in range(scene_count):
        for j in range(n_test):
            devs = [p for p in known if j < split.test_per_cell] + [p for p in unknown if j < split.unknown_per_cell]
            test_entries += render(1, s, split.train_per_cell + j, devs)

    train = Manifest(train_entries, "train", root)
    test = Manifest(test_entries, "test", root)
    write_manifest(train, root / "train.tsv")
    write_manifest(test, root / "test.tsv")
    save_profiles(profiles, root / "profiles.json")
    meta = {
        "seed": seed,
        "scene_count": scene_count,
        "split": asdict(split),
        "variability": asdict(var),
        "scenes": [asdict(s) for s in scenes],
    }
    (root / "dataset.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return SynthDataset(root, train, test, profiles, scenes)
