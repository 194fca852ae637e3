"""Synthetic training data: random piecewise fibers, noisy BGS, smoothed labels.

A dataset directory holds ``manifest.json`` plus one ``sample_%06d.bin`` per
sample.  Every sample draws from its own RNG stream derived from the global
seed and the sample index, so samples can be produced in any order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .physics import (
    DEFAULT_CONSTANTS,
    BfsTrace,
    BGSFrame,
    FiberProfile,
    PhysicsConstants,
    PumpPulse,
    SweepGrid,
    simulate_bgs,
)

MAGIC = b"BGS1"
FORMAT_VERSION = 1
# 10-90 % rise of an erf step is 2 * 1.28155 sigma
SIGMA_PER_SR = 1.0 / 2.563


class DatasetError(Exception):
    """Base class for dataset problems."""


class DegenerateInputError(DatasetError, ValueError):
    pass


class BfsRangeError(DatasetError, ValueError):
    pass


class FormatError(DatasetError):
    """Wrong magic bytes or unsupported version."""


class CorruptFileError(DatasetError):
    """Truncated or internally inconsistent sample file."""


@dataclass(frozen=True)
class ProfileRanges:
    bfs_range: tuple = (10.81e9, 10.89e9)
    section_length_range: tuple = (0.5, 5.0)
    gain_range: tuple = (0.8, 1.0)
    linewidth_range: tuple = (25e6, 35e6)
    total_length: float = 54.0

    def __post_init__(self):
        for name in ("bfs_range", "section_length_range", "gain_range", "linewidth_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min {lo} exceeds max {hi}")
        if self.section_length_range[0] <= 0:
            raise ValueError("section lengths must be positive")
        if self.total_length < self.section_length_range[1]:
            raise ValueError("total_length shorter than the longest section")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def sample_sections(rng: np.random.Generator, ranges: ProfileRanges, total_length: float):
    """Uniform draws of ``(length, bfs, linewidth, gain)`` per section.

    Draw order per section: length, BFS, gain, linewidth.  The last section
    is cut so the lengths sum to ``total_length``.
    """
    sections = []
    covered = 0.0
    while covered < total_length - 1e-12:
        length = rng.uniform(*ranges.section_length_range)
        bfs = rng.uniform(*ranges.bfs_range)
        gain = rng.uniform(*ranges.gain_range)
        lw = rng.uniform(*ranges.linewidth_range)
        length = min(length, total_length - covered)
        sections.append((length, bfs, lw, gain))
        covered += length
    return sections


def sample_fiber_profile(rng: np.random.Generator, ranges: ProfileRanges,
                         total_length: float | None = None,
                         unit_length: float = DEFAULT_CONSTANTS.unit_length) -> FiberProfile:
    total = ranges.total_length if total_length is None else total_length
    return FiberProfile.from_sections(sample_sections(rng, ranges, total), unit_length=unit_length)


def normalize_frame(frame: BGSFrame) -> BGSFrame:
    peak = frame.gain.max()
    if not peak > 0:
        raise DegenerateInputError("frame has no positive gain to normalize by")
    return BGSFrame(gain=frame.gain / peak, sweep=frame.sweep,
                    spatial_pitch=frame.spatial_pitch, normalized=True, meta=dict(frame.meta))


def snr_db(variance: float) -> float:
    """SNR of a unit-peak signal under additive noise of the given variance."""
    return float(-10.0 * np.log10(variance))


def add_gaussian_noise(frame: BGSFrame, variance: float, rng: np.random.Generator) -> BGSFrame:
    """Add i.i.d. zero-mean Gaussian noise of the given variance to every entry."""
    if variance < 0:
        raise ValueError("noise variance must be non-negative")
    meta = dict(frame.meta, noise_variance=float(variance))
    if variance == 0:
        return BGSFrame(frame.gain.copy(), frame.sweep, frame.spatial_pitch, frame.normalized, meta)
    noisy = frame.gain + rng.normal(0.0, np.sqrt(variance), size=frame.gain.shape)
    return BGSFrame(noisy, frame.sweep, frame.spatial_pitch, frame.normalized, meta)


def normalize_bfs(bfs, bfs_range):
    lo, hi = bfs_range
    if not lo < hi:
        raise BfsRangeError("BFS range must have min < max")
    bfs = np.asarray(bfs, dtype=np.float64)
    if np.any(bfs < lo) or np.any(bfs > hi):
        raise BfsRangeError(
            f"BFS values [{bfs.min():.6e}, {bfs.max():.6e}] outside range [{lo:.6e}, {hi:.6e}]"
        )
    return (bfs - lo) / (hi - lo)


def denormalize_bfs(value, bfs_range):
    lo, hi = bfs_range
    if not lo < hi:
        raise BfsRangeError("BFS range must have min < max")
    return lo + np.asarray(value, dtype=np.float64) * (hi - lo)


def smooth_label(trace: BfsTrace, target_sr: float) -> BfsTrace:
    """Gaussian-smooth a BFS trace so an ideal step rises 10-90 % over ``target_sr``."""
    if target_sr < 2 * trace.spatial_pitch:
        raise ValueError(
            f"target SR {target_sr} m is below two samples of {trace.spatial_pitch} m"
        )
    sigma = target_sr * SIGMA_PER_SR / trace.spatial_pitch
    smoothed = gaussian_filter1d(trace.values, sigma, mode="nearest", truncate=5.0)
    return BfsTrace(smoothed, trace.spatial_pitch, dict(trace.meta, target_sr=target_sr))


@dataclass(frozen=True)
class DatasetConfig:
    pulse_width_s: float = 40e-9
    sweep: SweepGrid = field(default_factory=SweepGrid)
    ranges: ProfileRanges = field(default_factory=ProfileRanges)
    target_sr: float = 0.5
    noise_variance_range: tuple = (0.0005, 0.005)
    # fiber simulated ahead of the window so its left columns see full context
    lead_in_m: float = 0.0
    constants: PhysicsConstants = DEFAULT_CONSTANTS

    @property
    def width(self) -> int:
        return int(round(self.ranges.total_length / self.constants.spatial_pitch))

    def to_dict(self):
        return {
            "pulse_width_s": self.pulse_width_s,
            "sweep": self.sweep.to_dict(),
            "ranges": self.ranges.to_dict(),
            "target_sr": self.target_sr,
            "noise_variance_range": list(self.noise_variance_range),
            "lead_in_m": self.lead_in_m,
            "constants": asdict(self.constants),
        }

    @classmethod
    def from_dict(cls, d):
        r = dict(d.get("ranges", {}))
        for key in ("bfs_range", "section_length_range", "gain_range", "linewidth_range"):
            if key in r:
                r[key] = tuple(r[key])
        kwargs = {k: d[k] for k in ("pulse_width_s", "target_sr", "lead_in_m") if k in d}
        if "noise_variance_range" in d:
            kwargs["noise_variance_range"] = tuple(d["noise_variance_range"])
        if "sweep" in d:
            kwargs["sweep"] = SweepGrid(**d["sweep"])
        if "constants" in d:
            kwargs["constants"] = PhysicsConstants(**d["constants"])
        return cls(ranges=ProfileRanges(**r), **kwargs)

    def digest(self) -> str:
        return config_digest(self.to_dict())


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class DatasetSample:
    input: np.ndarray          # (freq, width) float32, normalized + noisy
    label: np.ndarray          # (width,) float32, normalized smoothed BFS
    truth: np.ndarray          # (width,) float64, raw piecewise BFS in Hz
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.input.ndim != 2:
            raise DatasetError("sample input must be 2-D")
        if self.label.shape != (self.input.shape[1],) or self.truth.shape != self.label.shape:
            raise DatasetError("label/truth length must equal input width")


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def make_sample(config: DatasetConfig, seed: int, index: int) -> DatasetSample:
    rng = sample_stream(seed, index)
    const = config.constants
    width = config.width
    lead = int(round(config.lead_in_m / const.spatial_pitch))
    total = (width + lead) * const.spatial_pitch
    profile = sample_fiber_profile(rng, config.ranges, total_length=total,
                                   unit_length=const.unit_length)
    frame = simulate_bgs(profile, PumpPulse(config.pulse_width_s), config.sweep, const)
    frame = BGSFrame(frame.gain[:, lead:], frame.sweep, frame.spatial_pitch, meta=frame.meta)
    frame = normalize_frame(frame)
    variance = rng.uniform(*config.noise_variance_range)
    noisy = add_gaussian_noise(frame, variance, rng)

    unit_trace = BfsTrace(profile.bfs, const.unit_length)
    smooth = smooth_label(unit_trace, config.target_sr)
    ups = const.units_per_sample
    label_hz = smooth.values[lead * ups:: ups][:width]
    truth = profile.bfs[lead * ups:: ups][:width].copy()
    label = normalize_bfs(label_hz, config.ranges.bfs_range)
    meta = {
        "seed": int(seed),
        "index": int(index),
        "pulse_width_s": config.pulse_width_s,
        "noise_variance": float(variance),
        "snr_db": snr_db(variance),
        "sweep": config.sweep.to_dict(),
        "spatial_pitch": const.spatial_pitch,
        "bfs_range": list(config.ranges.bfs_range),
        "target_sr": config.target_sr,
        "config_digest": config.digest(),
    }
    return DatasetSample(noisy.gain.astype(np.float32), label.astype(np.float32), truth, meta)


def generate_samples(config: DatasetConfig, seed: int, n: int, start: int = 0):
    return [make_sample(config, seed, i) for i in range(start, start + n)]


def write_sample(path, sample: DatasetSample) -> None:
    n_freq, width = sample.input.shape
    meta = json.dumps(sample.meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HII", FORMAT_VERSION, n_freq, width))
        fh.write(np.ascontiguousarray(sample.input, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(sample.label, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(sample.truth, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def read_sample(path) -> DatasetSample:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a BGS sample file (bad magic)")
    header = struct.calcsize("<HII")
    if len(blob) < 4 + header:
        raise CorruptFileError(f"{path}: truncated header")
    version, n_freq, width = struct.unpack_from("<HII", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    off = 4 + header
    sizes = (4 * n_freq * width, 4 * width, 8 * width)
    if len(blob) < off + sum(sizes) + 4:
        raise CorruptFileError(f"{path}: truncated payload")
    inp = np.frombuffer(blob, "<f4", n_freq * width, off).reshape(n_freq, width)
    off += sizes[0]
    label = np.frombuffer(blob, "<f4", width, off)
    off += sizes[1]
    truth = np.frombuffer(blob, "<f8", width, off)
    off += sizes[2]
    (meta_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    if len(blob) != off + meta_len:
        raise CorruptFileError(f"{path}: metadata block length mismatch")
    try:
        meta = json.loads(blob[off:].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: unreadable metadata") from exc
    return DatasetSample(inp.astype(np.float32), label.astype(np.float32),
                         truth.astype(np.float64), meta)


def generate_dataset(config: DatasetConfig, seed: int, n: int, out_dir) -> Path:
    """Write ``n`` samples and a manifest into ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directory {out}: {exc}") from exc
    files = []
    for i in range(n):
        name = f"sample_{i:06d}.bin"
        write_sample(out / name, make_sample(config, seed, i))
        files.append(name)
    manifest = {
        "count": n,
        "config_digest": config.digest(),
        "config": config.to_dict(),
        "pulse_width_s": config.pulse_width_s,
        "sweep": config.sweep.to_dict(),
        "ranges": config.ranges.to_dict(),
        "target_sr": config.target_sr,
        "seed": int(seed),
        "files": files,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    if len(manifest.get("files", [])) != manifest.get("count"):
        raise DatasetError(f"{path}: file list does not match sample count")
    return manifest


def load_dataset(directory):
    manifest = load_manifest(directory)
    return [read_sample(Path(directory) / name) for name in manifest["files"]]


def stack_samples(samples):
    """Batch arrays ``(n, 1, freq, width)`` inputs and ``(n, width)`` labels."""
    x = np.stack([s.input for s in samples])[:, None].astype(np.float32)
    y = np.stack([s.label for s in samples]).astype(np.float32)
    return x, y
