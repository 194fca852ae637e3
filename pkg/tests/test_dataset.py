import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from botdasr.baselines import transition_length
from botdasr.dataset import (
    BfsRangeError,
    CorruptFileError,
    DatasetConfig,
    DatasetError,
    DegenerateInputError,
    FormatError,
    ProfileRanges,
    add_gaussian_noise,
    denormalize_bfs,
    generate_dataset,
    load_dataset,
    load_manifest,
    make_sample,
    normalize_bfs,
    normalize_frame,
    read_sample,
    sample_fiber_profile,
    sample_sections,
    smooth_label,
    snr_db,
    stack_samples,
    write_sample,
)
from botdasr.physics import BfsTrace, BGSFrame, SweepGrid

SMALL = DatasetConfig(ranges=ProfileRanges(total_length=6.4), lead_in_m=2.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_sections_respect_ranges_and_cover_length(seed):
    ranges = ProfileRanges()
    sections = sample_sections(np.random.default_rng(seed), ranges, 54.0)
    assert sum(s[0] for s in sections) == pytest.approx(54.0)
    for length, bfs, lw, gain in sections[:-1]:
        assert ranges.section_length_range[0] <= length <= ranges.section_length_range[1]
    for length, bfs, lw, gain in sections:
        assert ranges.bfs_range[0] <= bfs <= ranges.bfs_range[1]
        assert ranges.linewidth_range[0] <= lw <= ranges.linewidth_range[1]
        assert ranges.gain_range[0] <= gain <= ranges.gain_range[1]
    prof = sample_fiber_profile(np.random.default_rng(seed), ranges)
    assert prof.n_units == 5400


def test_normalize_frame_peak_is_one_and_rejects_flat():
    g = np.random.default_rng(0).uniform(0.1, 2.0, (71, 10))
    frame = normalize_frame(BGSFrame(g, SweepGrid(), 0.1))
    assert frame.gain.max() == pytest.approx(1.0)
    assert frame.normalized
    with pytest.raises(DegenerateInputError):
        normalize_frame(BGSFrame(np.zeros((71, 10)), SweepGrid(), 0.1))


def test_snr_arithmetic():
    assert snr_db(0.005) == pytest.approx(23.0103, abs=1e-4)
    assert snr_db(0.0005) == pytest.approx(33.0103, abs=1e-4)
    assert round(snr_db(0.005), 1) == 23.0
    assert round(snr_db(0.0005), 1) == 33.0


def test_noise_variance_and_rejection():
    frame = BGSFrame(np.zeros((71, 4000)), SweepGrid(), 0.1)
    noisy = add_gaussian_noise(frame, 0.002, np.random.default_rng(1))
    assert noisy.gain.var() == pytest.approx(0.002, rel=0.02)
    assert noisy.meta["noise_variance"] == 0.002
    with pytest.raises(ValueError):
        add_gaussian_noise(frame, -1.0, np.random.default_rng(1))


@settings(max_examples=50, deadline=None)
@given(st.floats(10.8e9, 10.9e9))
def test_bfs_normalization_roundtrip(v):
    r = (10.8e9, 10.9e9)
    n = normalize_bfs(np.array([v]), r)
    assert 0.0 <= n[0] <= 1.0
    assert denormalize_bfs(n, r)[0] == pytest.approx(v, rel=1e-12)


def test_bfs_normalization_rejects_out_of_range():
    with pytest.raises(BfsRangeError):
        normalize_bfs(np.array([10.95e9]), (10.8e9, 10.9e9))


def step_trace(pitch, n=4000, at=2000):
    v = np.full(n, 10.83e9)
    v[at:] = 10.87e9
    return BfsTrace(v, pitch)


def test_smooth_label_rise_equals_target_sr():
    tr = smooth_label(step_trace(0.01), 0.5)
    rise = transition_length(tr, (1500, 2500), plateau_samples=10)
    assert rise == pytest.approx(0.5, abs=0.01)
    # decimated to the 0.1 m sample pitch the rise stays within one sample
    dec = BfsTrace(tr.values[::10], 0.1)
    assert abs(transition_length(dec, (150, 250), plateau_samples=5) - 0.5) <= 0.1


def test_smooth_label_rejects_sr_below_two_samples():
    with pytest.raises(ValueError):
        smooth_label(step_trace(0.1, 100, 50), 0.15)


def test_sample_shapes_and_label_range():
    s = make_sample(SMALL, 3, 0)
    assert s.input.shape == (71, 64)
    assert s.input.dtype == np.float32
    assert s.label.shape == (64,) and s.truth.shape == (64,)
    assert 0.0 <= s.label.min() and s.label.max() <= 1.0
    assert s.meta["config_digest"] == SMALL.digest()
    assert 23.0 <= s.meta["snr_db"] <= 33.02


def test_samples_are_independent_of_generation_order():
    a = make_sample(SMALL, 7, 5)
    b = make_sample(SMALL, 7, 5)
    c = make_sample(SMALL, 7, 6)
    assert np.array_equal(a.input, b.input) and np.array_equal(a.label, b.label)
    assert not np.array_equal(a.input, c.input)


def test_write_read_roundtrip(tmp_path):
    s = make_sample(SMALL, 1, 2)
    path = tmp_path / "s.bin"
    write_sample(path, s)
    r = read_sample(path)
    assert np.array_equal(r.input, s.input)
    assert np.array_equal(r.label, s.label)
    assert np.array_equal(r.truth, s.truth)
    assert r.meta == json.loads(json.dumps(s.meta))


def test_corrupt_and_foreign_files(tmp_path):
    s = make_sample(SMALL, 1, 2)
    path = tmp_path / "s.bin"
    write_sample(path, s)
    blob = path.read_bytes()
    (tmp_path / "trunc.bin").write_bytes(blob[:200])
    with pytest.raises(CorruptFileError):
        read_sample(tmp_path / "trunc.bin")
    (tmp_path / "foreign.bin").write_bytes(b"PNG\x00" + blob[4:])
    with pytest.raises(FormatError):
        read_sample(tmp_path / "foreign.bin")
    bad_version = bytearray(blob)
    bad_version[4] = 9
    (tmp_path / "ver.bin").write_bytes(bytes(bad_version))
    with pytest.raises(FormatError):
        read_sample(tmp_path / "ver.bin")


def test_dataset_bit_identical_for_same_seed(tmp_path):
    generate_dataset(SMALL, 11, 3, tmp_path / "a")
    generate_dataset(SMALL, 11, 3, tmp_path / "b")
    for name in ["manifest.json"] + load_manifest(tmp_path / "a")["files"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    x, y = stack_samples(load_dataset(tmp_path / "a"))
    assert x.shape == (3, 1, 71, 64) and y.shape == (3, 64)


def test_manifest_count_mismatch(tmp_path):
    generate_dataset(SMALL, 0, 2, tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["count"] = 5
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(DatasetError):
        load_manifest(tmp_path)


def test_config_roundtrip_keeps_digest():
    d = SMALL.to_dict()
    assert DatasetConfig.from_dict(d).digest() == SMALL.digest()
    assert DatasetConfig().digest() != SMALL.digest()
