"""Log-mel spectrogram frontend.

Defaults: 32 kHz input, 4096-point FFT, 96 ms (3072-sample) Hann window,
500-sample hop and 256 HTK mel filters. Frames are centred by reflect-padding
the signal with half a window on both sides, so a clip of ``n`` samples gives
``n // hop + 1`` frames.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .audio import AudioClip, resample
from .errors import ConfigurationError, InvalidInputError


@dataclass(frozen=True)
class FrontendConfig:
    target_rate_hz: int = 32000
    fft_size: int = 4096
    window_samples: int = 3072
    hop_samples: int = 500
    mel_bins: int = 256
    fmin_hz: float = 0.0
    fmax_hz: float | None = None
    log_floor: float = 1e-5
    window: str = "hann"  # "rect" is for spectral test fixtures only

    def __post_init__(self):
        if self.fmax_hz is None:
            object.__setattr__(self, "fmax_hz", self.target_rate_hz / 2)
        if self.target_rate_hz <= 0:
            raise ConfigurationError("target_rate_hz must be positive")
        if not 1 <= self.window_samples <= self.fft_size:
            raise ConfigurationError("window_samples must be in [1, fft_size]")
        if self.hop_samples < 1:
            raise ConfigurationError("hop_samples must be >= 1")
        if self.mel_bins < 1:
            raise ConfigurationError("mel_bins must be >= 1")
        if not 0 <= self.fmin_hz < self.fmax_hz <= self.target_rate_hz / 2:
            raise ConfigurationError("need 0 <= fmin_hz < fmax_hz <= target_rate_hz / 2")
        if not self.log_floor > 0:
            raise ConfigurationError("log_floor must be positive")
        if self.window not in ("hann", "rect"):
            raise ConfigurationError(f"unknown window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def frames_for(self, n_samples: int) -> int:
        return n_samples // self.hop_samples + 1

    def fingerprint(self) -> str:
        blob = repr(sorted(asdict(self).items())).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    values: np.ndarray  # (mel_bins, frames)
    config_fingerprint: str = field(default="")

    @property
    def shape(self):
        return self.values.shape


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _window(cfg: FrontendConfig) -> np.ndarray:
    n = cfg.window_samples
    if cfg.window == "rect":
        return np.ones(n)
    # periodic Hann
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(samples: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    """Centre-padded, windowed frames of shape (frames, window_samples)."""
    x = np.asarray(samples, dtype=np.float64)
    half = cfg.window_samples // 2
    padded = np.pad(x, (half, cfg.window_samples - half), mode="reflect")
    n_frames = cfg.frames_for(x.shape[0])
    idx = np.arange(cfg.window_samples)[None, :] + cfg.hop_samples * np.arange(n_frames)[:, None]
    return padded[idx] * _window(cfg)


def stft_power(clip: AudioClip, cfg: FrontendConfig) -> np.ndarray:
    """Power spectrogram ``|DFT|**2`` of shape (fft_size // 2 + 1, frames)."""
    if clip.sample_rate_hz != cfg.target_rate_hz:
        raise InvalidInputError(
            f"clip is at {clip.sample_rate_hz} Hz, frontend expects {cfg.target_rate_hz} Hz"
        )
    if len(clip) < 1:
        raise InvalidInputError("clip shorter than one hop")
    frames = frame_signal(clip.samples, cfg)
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    return (spec.real**2 + spec.imag**2).T


@lru_cache(maxsize=16)
def _filterbank(cfg: FrontendConfig) -> np.ndarray:
    bin_hz = np.arange(cfg.n_bins) * cfg.target_rate_hz / cfg.fft_size
    edges_mel = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.mel_bins + 2)
    edges = mel_to_hz(edges_mel)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz[None, :] - lo) / (mid - lo)
    falling = (hi - bin_hz[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(~(fb > 0).any(axis=1))
    if empty.size:
        raise ConfigurationError(
            f"{cfg.mel_bins} mel bins is too many for a {cfg.fft_size}-point FFT: "
            f"filter(s) {empty[:5].tolist()} cover no FFT bin"
        )
    fb.flags.writeable = False
    return fb


def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Triangular HTK-mel filters, shape (mel_bins, fft_size // 2 + 1)."""
    return _filterbank(cfg).copy()


def mel_centers_hz(cfg: FrontendConfig) -> np.ndarray:
    edges_mel = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.mel_bins + 2)
    return mel_to_hz(edges_mel[1:-1])


def compute_mel(clip: AudioClip, cfg: FrontendConfig | None = None) -> MelSpectrogram:
    cfg = cfg or FrontendConfig()
    if clip.sample_rate_hz != cfg.target_rate_hz:
        clip = resample(clip, cfg.target_rate_hz)
    power = stft_power(clip, cfg)
    mel = _filterbank(cfg) @ power
    values = np.log(np.maximum(mel, cfg.log_floor))
    return MelSpectrogram(values, cfg.fingerprint())
