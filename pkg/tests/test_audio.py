import numpy as np
import pytest
from scipy.io import wavfile

from scenewise.audio import AudioClip, read_wav, resample, write_wav
from scenewise.errors import InvalidInputError


def test_clip_validation():
    with pytest.raises(InvalidInputError):
        AudioClip(np.array([]), 32000)
    with pytest.raises(InvalidInputError):
        AudioClip(np.array([0.0, np.nan]), 32000)
    with pytest.raises(InvalidInputError):
        AudioClip(np.zeros(4), 0)


def test_resample_length_44k1_to_32k(rng):
    clip = AudioClip(rng.uniform(-0.5, 0.5, 44100), 44100)
    out = resample(clip, 32000)
    assert out.sample_rate_hz == 32000
    assert len(out) == 32000


def test_resample_identity_returns_same_samples(rng):
    clip = AudioClip(rng.uniform(-1, 1, 32000), 32000)
    out = resample(clip, 32000)
    assert np.array_equal(out.samples, clip.samples)


def test_resampled_tone_matches_direct_synthesis():
    t_in = np.arange(44100) / 44100
    clip = AudioClip(np.sin(2 * np.pi * 1000 * t_in), 44100)
    out = resample(clip, 32000).samples
    expected = np.sin(2 * np.pi * 1000 * np.arange(32000) / 32000)
    # skip filter edge transients
    core = slice(500, -500)
    corr = np.corrcoef(out[core], expected[core])[0, 1]
    assert corr > 0.999


@pytest.mark.parametrize("n", [1, 7, 441, 1000])
def test_resample_length_rounds(n, rng):
    out = resample(AudioClip(rng.uniform(-1, 1, n), 44100), 32000)
    assert len(out) == max(1, round(n * 32000 / 44100))


def test_resample_rejects_bad_rate(rng):
    with pytest.raises(InvalidInputError):
        resample(AudioClip(np.ones(10), 16000), 0)


@pytest.mark.parametrize(
    "dtype,scale",
    [(np.int16, 2.0**15), (np.int32, 2.0**31), (np.float32, 1.0)],
)
def test_read_wav_formats(tmp_path, dtype, scale):
    data = np.array([0.0, 0.25, -0.5, 0.75])
    raw = (data * scale).astype(dtype) if dtype != np.float32 else data.astype(np.float32)
    path = tmp_path / "x.wav"
    wavfile.write(path, 32000, raw)
    clip = read_wav(path)
    assert clip.sample_rate_hz == 32000
    np.testing.assert_allclose(clip.samples, data, atol=1e-4)


def test_read_wav_24bit(tmp_path):
    # hand-built 24-bit PCM file
    values = np.array([0, 2**22, -(2**23), 2**23 - 1], dtype=np.int64)
    payload = b"".join(int(v).to_bytes(3, "little", signed=True) for v in values)
    header = b"RIFF" + (36 + len(payload)).to_bytes(4, "little") + b"WAVE"
    fmt = b"fmt " + (16).to_bytes(4, "little") + (1).to_bytes(2, "little") + (1).to_bytes(2, "little")
    fmt += (44100).to_bytes(4, "little") + (44100 * 3).to_bytes(4, "little") + (3).to_bytes(2, "little")
    fmt += (24).to_bytes(2, "little")
    data = b"data" + len(payload).to_bytes(4, "little") + payload
    path = tmp_path / "x24.wav"
    path.write_bytes(header + fmt + data)
    clip = read_wav(path)
    np.testing.assert_allclose(clip.samples, values / 2.0**23)


def test_read_wav_rejects_stereo(tmp_path):
    path = tmp_path / "stereo.wav"
    wavfile.write(path, 32000, np.zeros((10, 2), dtype=np.float32))
    with pytest.raises(InvalidInputError, match="mono"):
        read_wav(path)


def test_write_read_round_trip(tmp_path, rng):
    clip = AudioClip(rng.uniform(-1, 1, 100).astype(np.float32), 32000)
    write_wav(tmp_path / "a.wav", clip)
    back = read_wav(tmp_path / "a.wav")
    assert np.array_equal(back.samples, clip.samples)
