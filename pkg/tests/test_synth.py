import hashlib

import numpy as np
import pytest

from scenewise.audio import read_wav
from scenewise.data.devices import SyntheticDeviceProfile, default_profiles
from scenewise.data.manifest import load_manifest
from scenewise.data.synth import (
    SCENE_NAMES, SplitSpec, _clip_rng, make_scene_profiles, render_source, synth_generate,
)
from scenewise.errors import ConfigurationError


def tree_digest(root):
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def test_desk_scale_counts(desk_dataset):
    train, test = desk_dataset.train, desk_dataset.test
    assert len(train) == 10 * 6 * 40 == 2400
    assert train.labels == sorted(SCENE_NAMES)
    assert train.devices == ["a", "b", "c", "s1", "s2", "s3"]
    assert test.devices == ["a", "b", "c", "s1", "s2", "s3", "s4", "s5", "s6"]
    assert len(test) == 10 * 9 * 20
    for dev in test.devices:
        assert len(test.for_device(dev)) == 200


def test_unknown_devices_never_in_training(desk_dataset):
    unknown = {p.device_id for p in desk_dataset.profiles if not p.is_known}
    assert unknown and not unknown & {e.device_id for e in desk_dataset.train}


def test_manifests_on_disk_match(desk_dataset):
    root = desk_dataset.root
    assert load_manifest(root / "train.tsv", "train").entries == desk_dataset.train.entries
    assert load_manifest(root / "test.tsv", "test").entries == desk_dataset.test.entries
    clip = read_wav(desk_dataset.train.path_of(desk_dataset.train[0]))
    assert (clip.sample_rate_hz, len(clip)) == (32000, 32000)


def test_train_and_test_sources_disjoint(desk_dataset):
    train_ids = {(e.scene_label, e.identifier) for e in desk_dataset.train}
    test_ids = {(e.scene_label, e.identifier) for e in desk_dataset.test}
    assert not train_ids & test_ids


def test_parallel_recordings_share_identifier(tiny_dataset):
    by_id = {}
    for e in tiny_dataset.train:
        by_id.setdefault((e.scene_label, e.identifier), set()).add(e.device_id)
    assert all(devs == set(tiny_dataset.train.devices) for devs in by_id.values())


def test_byte_identical_rerun(tmp_path):
    kw = dict(split_spec=SplitSpec(2, 1))
    synth_generate(7, 3, default_profiles(7), out_dir=tmp_path / "one", **kw)
    synth_generate(7, 3, default_profiles(7), out_dir=tmp_path / "two", **kw)
    assert tree_digest(tmp_path / "one") == tree_digest(tmp_path / "two")
    synth_generate(8, 3, default_profiles(8), out_dir=tmp_path / "three", **kw)
    assert tree_digest(tmp_path / "one") != tree_digest(tmp_path / "three")


def test_unknown_device_in_train_request(tmp_path):
    with pytest.raises(ConfigurationError, match="s4"):
        synth_generate(1, 2, default_profiles(1), split_spec=SplitSpec(1, 1, train_devices=("a", "s4")),
                       out_dir=tmp_path)


def test_missing_profiles_rejected(tmp_path):
    profiles = default_profiles(1)
    with pytest.raises(ConfigurationError, match="identity"):
        synth_generate(1, 2, profiles[1:], out_dir=tmp_path)
    with pytest.raises(ConfigurationError):
        synth_generate(1, 2, [p for p in profiles if p.is_known], out_dir=tmp_path)
    with pytest.raises(ConfigurationError):
        synth_generate(1, 1, profiles, out_dir=tmp_path)


def test_known_unknown_ratio_parameter(tmp_path):
    ds = synth_generate(3, 2, default_profiles(3), split_spec=SplitSpec(1, 4, unknown_test_per_cell=2),
                        out_dir=tmp_path)
    assert len(ds.test.for_device("a")) == 2 * 4
    assert len(ds.test.for_device("s5")) == 2 * 2


def test_train_device_subset(tmp_path):
    ds = synth_generate(3, 2, default_profiles(3), split_spec=SplitSpec(1, 1, train_devices=("a", "b")),
                        out_dir=tmp_path)
    assert ds.train.devices == ["a", "b"]


def test_scene_envelopes_distinct():
    scenes = make_scene_profiles(5, 10)
    assert len({s.peaks for s in scenes}) == 10
    assert all(3 <= len(s.peaks) <= 5 for s in scenes)


def test_reference_device_clip_matches_renderer(tiny_dataset):
    e = next(e for e in tiny_dataset.train if e.device_id == "a")
    scene_idx = [s.scene_label for s in tiny_dataset.scenes].index(e.scene_label)
    src = int(e.identifier.rsplit("-", 1)[1])
    expected = render_source(tiny_dataset.scenes[scene_idx], _clip_rng(11, 0, scene_idx, src))
    np.testing.assert_array_equal(read_wav(tiny_dataset.train.path_of(e)).samples, expected.astype(np.float32))


def test_scene_peaks_stand_out_from_floor():
    """Band energy at every profile peak is >= 6 dB above the noise floor alone."""
    scenes = make_scene_profiles(20250601, 10)
    freqs = np.fft.rfftfreq(32000, 1 / 32000)
    worst = np.inf
    for s_idx, scene in enumerate(scenes):
        for src in range(10):
            signal, floor = render_source(scene, _clip_rng(20250601, 0, s_idx, src), return_parts=True)
            spec_s = np.abs(np.fft.rfft(signal)) ** 2
            spec_f = np.abs(np.fft.rfft(floor)) ** 2
            for center, width, _ in scene.peaks:
                band = (freqs >= center * 2 ** (-width / 2)) & (freqs <= center * 2 ** (width / 2))
                worst = min(worst, 10 * np.log10(spec_s[band].sum() / spec_f[band].sum()))
    assert worst >= 6.0


def test_device_colouring_changes_audio(tiny_dataset):
    root = tiny_dataset.root
    entries = [e for e in tiny_dataset.train if e.identifier == tiny_dataset.train[0].identifier
               and e.scene_label == tiny_dataset.train[0].scene_label]
    clips = {e.device_id: read_wav(root / e.filename).samples for e in entries}
    assert not np.allclose(clips["a"], clips["b"])
