"""Audio clips, WAV input/output and band-limited resampling."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import firwin, resample_poly

from .errors import InvalidInputError

KAISER_BETA = 8.0
TAPS_PER_PHASE = 64


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono audio with its sample rate.

    ``samples`` is stored as a read-only float array. Construction validates
    that the clip is non-empty, finite and has a positive rate.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise InvalidInputError(f"audio must be mono (1-D), got shape {samples.shape}")
        if samples.size == 0:
            raise InvalidInputError("audio clip is empty")
        if not np.issubdtype(samples.dtype, np.floating):
            samples = samples.astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("audio clip contains non-finite samples")
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise InvalidInputError(f"sample rate must be a positive integer, got {self.sample_rate_hz}")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


def _design_lowpass(up: int, down: int) -> np.ndarray:
    max_rate = max(up, down)
    half_len = TAPS_PER_PHASE // 2 * max_rate
    return firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", KAISER_BETA))


def resample(clip: AudioClip, target_rate_hz: int) -> AudioClip:
    """Resample with a Kaiser-windowed sinc polyphase filter.

    The output has ``round(len * target / source)`` samples. Identical rates
    return ``clip`` itself.
    """
    if target_rate_hz <= 0:
        raise InvalidInputError(f"target rate must be positive, got {target_rate_hz}")
    if clip.sample_rate_hz == target_rate_hz:
        return clip
    ratio = Fraction(int(target_rate_hz), clip.sample_rate_hz)
    up, down = ratio.numerator, ratio.denominator
    x = np.asarray(clip.samples, dtype=np.float64)
    y = resample_poly(x, up, down, window=_design_lowpass(up, down))
    n_out = max(1, int(round(len(x) * target_rate_hz / clip.sample_rate_hz)))
    if y.shape[0] >= n_out:
        y = y[:n_out]
    else:
        y = np.pad(y, (0, n_out - y.shape[0]))
    return AudioClip(y, int(target_rate_hz))


_INT_SCALE = {np.dtype(np.int16): 2.0**15, np.dtype(np.int32): 2.0**31}


def read_wav(path) -> AudioClip:
    """Read a mono PCM WAV file (16/24/32-bit integer or 32-bit float)."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise InvalidInputError(f"{path}: cannot read WAV file ({exc})") from exc
    if data.ndim != 1:
        raise InvalidInputError(f"{path}: expected mono audio, file has {data.shape[1]} channels")
    if data.dtype == np.float32:
        samples = data.astype(np.float64)
    elif data.dtype in _INT_SCALE:
        # scipy returns 24-bit data left-justified in int32
        samples = data.astype(np.float64) / _INT_SCALE[data.dtype]
    else:
        raise InvalidInputError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip) -> None:
    """Write ``clip`` as a mono 32-bit float WAV file."""
    wavfile.write(Path(path), clip.sample_rate_hz, np.asarray(clip.samples, dtype=np.float32))

