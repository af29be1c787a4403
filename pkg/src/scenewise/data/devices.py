"""Synthetic recording devices: FIR colouration plus a gain offset."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..audio import AudioClip
from ..errors import FormatError, InvalidProfileError

IR_TAPS = 256
SAMPLE_RATE = 32000


@dataclass(frozen=True, eq=False)
class SyntheticDeviceProfile:
    device_id: str
    impulse_response: np.ndarray
    gain_db: float = 0.0
    is_known: bool = True
    # generation parameters, kept so profile files can be regenerated
    tilt_db_per_octave: float | None = None
    notches: tuple = ()

    def __post_init__(self):
        ir = np.asarray(self.impulse_response, dtype=np.float64)
        if ir.ndim != 1 or ir.size == 0:
            raise InvalidProfileError(f"device {self.device_id!r}: impulse response must be a non-empty 1-D array")
        if not np.any(ir):
            raise InvalidProfileError(f"device {self.device_id!r}: impulse response is all zero")
        if not np.all(np.isfinite(ir)):
            raise InvalidProfileError(f"device {self.device_id!r}: impulse response is not finite")
        object.__setattr__(self, "impulse_response", ir)

    @property
    def is_identity(self) -> bool:
        ir = self.impulse_response
        return self.gain_db == 0.0 and ir[0] == 1.0 and not np.any(ir[1:])

    @classmethod
    def identity(cls, device_id="a"):
        return cls(device_id, np.array([1.0]), 0.0, True)


def design_ir(tilt_db_per_octave=0.0, notches=(), taps=IR_TAPS, sample_rate=SAMPLE_RATE, ref_hz=1000.0):
    """Linear-phase FIR with a spectral tilt and Gaussian notches.

    ``notches`` is a sequence of ``(center_hz, depth_db, width_octaves)``.
    The tilt is relative to ``ref_hz``; the response is designed by frequency
    sampling and Hann-windowed.
    """
    freqs = np.fft.rfftfreq(taps, 1.0 / sample_rate)
    octaves = np.log2(np.maximum(freqs, 20.0) / ref_hz)
    gain_db = tilt_db_per_octave * octaves
    for center, depth, width in notches:
        d = np.log2(np.maximum(freqs, 20.0) / center) / width
        gain_db = gain_db - depth * np.exp(-0.5 * d * d)
    mag = 10.0 ** (gain_db / 20.0)
    ir = np.fft.irfft(mag, n=taps)
    ir = np.roll(ir, taps // 2) * np.hanning(taps)
    return ir


def frequency_response(ir, n_fft, sample_rate=SAMPLE_RATE):
    """Complex response of ``ir`` on an ``n_fft``-point rfft grid."""
    return np.fft.rfft(ir, n=n_fft)


def apply_device_ir(clip: AudioClip, profile: SyntheticDeviceProfile) -> AudioClip:
    """Convolve with the device IR, apply its gain and truncate to the input length."""
    if profile.is_identity:
        return clip
    y = np.convolve(clip.samples, profile.impulse_response)[: len(clip)]
    return AudioClip(y * 10.0 ** (profile.gain_db / 20.0), clip.sample_rate_hz)


def random_profile(device_id, rng: np.random.Generator, is_known=True, sample_rate=SAMPLE_RATE):
    """Draw a consumer-device-like profile: tilt, 2-3 notches, +-6 dB gain."""
    tilt = float(rng.uniform(-6.0, 6.0))
    n_notch = int(rng.integers(2, 4))
    notches = tuple(
        (float(np.exp(rng.uniform(np.log(150.0), np.log(12000.0)))),
         float(rng.uniform(10.0, 25.0)),
         float(rng.uniform(0.15, 0.5)))
        for _ in range(n_notch)
    )
    gain = float(rng.uniform(-6.0, 6.0))
    ir = design_ir(tilt, notches, sample_rate=sample_rate)
    return SyntheticDeviceProfile(device_id, ir, gain, is_known, tilt, notches)


def default_profiles(seed=0, known=("b", "c", "s1", "s2", "s3"), unknown=("s4", "s5", "s6")):
    """Identity device ``a`` plus seeded random profiles for the other devices."""
    ss = np.random.SeedSequence([seed, 0xDE11CE])
    rngs = [np.random.default_rng(s) for s in ss.spawn(len(known) + len(unknown))]
    profiles = [SyntheticDeviceProfile.identity("a")]
    for dev, rng in zip(known, rngs):
        profiles.append(random_profile(dev, rng, True))
    for dev, rng in zip(unknown, rngs[len(known):]):
        profiles.append(random_profile(dev, rng, False))
    return profiles


def save_profiles(profiles, path) -> None:
    """Write profiles as JSON; each entry keeps its generation parameters."""
    items = []
    for p in profiles:
        item = {"device_id": p.device_id, "known": p.is_known, "gain_db": p.gain_db}
        if p.tilt_db_per_octave is not None:
            item["tilt_db_per_octave"] = p.tilt_db_per_octave
            item["notches"] = [list(n) for n in p.notches]
        else:
            item["ir"] = p.impulse_response.tolist()
        items.append(item)
    Path(path).write_text(json.dumps({"devices": items}, indent=2) + "\n", encoding="utf-8")


def load_profiles(path) -> list[SyntheticDeviceProfile]:
    """Read a profile file.

    Each device gives ``device_id``, ``known``, ``gain_db`` and either explicit
    ``ir`` coefficients or ``tilt_db_per_octave`` + ``notches`` (list of
    ``[center_hz, depth_db, width_octaves]``) to be designed here.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        items = doc["devices"]
        profiles = []
        for item in items:
            dev = str(item["device_id"])
            gain = float(item.get("gain_db", 0.0))
            known = bool(item.get("known", True))
            if "ir" in item:
                profiles.append(SyntheticDeviceProfile(dev, np.asarray(item["ir"], dtype=np.float64), gain, known))
            else:
                tilt = float(item["tilt_db_per_octave"])
                notches = tuple(tuple(float(v) for v in n) for n in item.get("notches", ()))
                if any(len(n) != 3 for n in notches):
                    raise ValueError("each notch needs [center_hz, depth_db, width_octaves]")
                profiles.append(SyntheticDeviceProfile(dev, design_ir(tilt, notches), gain, known, tilt, notches))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"invalid device profile file ({exc})", path=path) from None
    return profiles
