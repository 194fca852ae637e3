"""Hotspot fixtures and the metrics used to compare CNN, LCF and DPP traces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import bfs_uncertainty, dpp_differential, lcf_trace, shift_trace, transition_length
from .dataset import add_gaussian_noise, normalize_frame, smooth_label
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

MHZ = 1e6


@dataclass(frozen=True)
class HotspotFixture:
    """Uniform background fiber carrying short heated sections.

    ``hotspots`` holds ``(start_m, length_m)`` pairs; every hotspot is raised
    by ``contrast`` Hz above the background BFS.
    """

    fiber_length: float = 54.0
    background_bfs: float = 10.85e9
    contrast: float = 20e6
    hotspots: tuple = ((30.0, 3.3), (38.0, 1.0), (44.0, 0.5))
    linewidth: float = 30e6
    gain_scale: float = 1.0

    def __post_init__(self):
        for start, length in self.hotspots:
            if start < 0 or start + length > self.fiber_length:
                raise ValueError(f"hotspot at {start} m (+{length} m) exceeds the fiber")

    def profile(self, constants: PhysicsConstants = DEFAULT_CONSTANTS) -> FiberProfile:
        p = FiberProfile.uniform(self.fiber_length, self.background_bfs, self.linewidth,
                                 self.gain_scale, constants.unit_length)
        for start, length in self.hotspots:
            lo = int(round(start / constants.unit_length))
            hi = int(round((start + length) / constants.unit_length))
            p.bfs[lo:hi] = self.background_bfs + self.contrast
        return p

    def truth(self, constants: PhysicsConstants = DEFAULT_CONSTANTS) -> BfsTrace:
        return BfsTrace(self.profile(constants).bfs_at_samples(constants), constants.spatial_pitch)

    def reference(self, target_sr: float, constants: PhysicsConstants = DEFAULT_CONSTANTS) -> BfsTrace:
        """Truth as seen by an ideal instrument of spatial resolution ``target_sr``."""
        unit = BfsTrace(self.profile(constants).bfs, constants.unit_length)
        smooth = smooth_label(unit, target_sr)
        return BfsTrace(smooth.values[:: constants.units_per_sample], constants.spatial_pitch)

    def to_dict(self):
        return {
            "fiber_length": self.fiber_length,
            "background_bfs": self.background_bfs,
            "contrast": self.contrast,
            "hotspots": [list(h) for h in self.hotspots],
            "linewidth": self.linewidth,
            "gain_scale": self.gain_scale,
        }


def simulate_measurement(profile: FiberProfile, pulse_width_s: float, sweep: SweepGrid,
                         noise_variance: float, n_avg: int, rng: np.random.Generator,
                         constants: PhysicsConstants = DEFAULT_CONSTANTS, clean=None) -> BGSFrame:
    """One averaged acquisition: calibrated gain plus noise of variance ``noise_variance / n_avg``.

    The gain calibration puts a 40 ns uniform-fiber plateau at 1, so the noise
    variance sets the SNR relative to that reference level.
    """
    if clean is None:
        clean = simulate_bgs(profile, PumpPulse(pulse_width_s), sweep, constants)
    noisy = add_gaussian_noise(clean, noise_variance / n_avg, rng)
    noisy.meta.update(pulse_width_s=pulse_width_s, n_avg=n_avg,
                      single_shot_variance=noise_variance)
    return noisy


def lcf_alignment(pulse_width_s: float, constants: PhysicsConstants = DEFAULT_CONSTANTS) -> float:
    """Shift (m) from a single-pulse sample to the centre of the fiber it integrates."""
    return 0.25 * pulse_width_s * constants.group_velocity


def dpp_alignment(long_s: float, short_s: float, constants: PhysicsConstants = DEFAULT_CONSTANTS) -> float:
    return 0.25 * (long_s + short_s) * constants.group_velocity


def lcf_measurement(frame: BGSFrame, constants: PhysicsConstants = DEFAULT_CONSTANTS) -> BfsTrace:
    trace = lcf_trace(frame)
    return shift_trace(trace, lcf_alignment(frame.meta["pulse_width_s"], constants))


def dpp_measurement(frame_long: BGSFrame, frame_short: BGSFrame,
                    constants: PhysicsConstants = DEFAULT_CONSTANTS) -> BfsTrace:
    diff = dpp_differential(frame_long, frame_short)
    trace = lcf_trace(diff)
    shift = dpp_alignment(frame_long.meta["pulse_width_s"], frame_short.meta["pulse_width_s"], constants)
    aligned = shift_trace(trace, shift)
    aligned.meta["failed_columns"] = trace.meta["failed_columns"]
    return aligned


def cnn_measurement(model, frame: BGSFrame, bfs_range, window: int, margin: int = 20,
                    stride: int | None = None) -> BfsTrace:
    from .srnet import infer_long

    gain = normalize_frame(frame).gain
    return infer_long(model, gain, bfs_range, window=window, margin=margin, stride=stride,
                      spatial_pitch=frame.spatial_pitch)


def hotspot_value(trace: BfsTrace, start: float, length: float, baseline: float,
                  search_margin: float = 0.5) -> float:
    """BFS read off a trace for a hotspot: the value deviating most from
    ``baseline`` within ``search_margin`` of the hotspot extent."""
    pitch = trace.spatial_pitch
    lo = max(int(np.floor((start - search_margin) / pitch)), 0)
    hi = min(int(np.ceil((start + length + search_margin) / pitch)) + 1, len(trace))
    seg = trace.values[lo:hi]
    return float(seg[np.argmax(np.abs(seg - baseline))])


def center_value(trace: BfsTrace, start: float, length: float) -> float:
    """Trace value at the sample nearest the hotspot centre."""
    k = int(round((start + 0.5 * length) / trace.spatial_pitch))
    return float(trace.values[min(max(k, 0), len(trace) - 1)])


def hotspot_errors(trace: BfsTrace, fixture: HotspotFixture, reference: BfsTrace | None = None,
                   search_margin: float = 0.5, mode: str = "extreme") -> list:
    """Per-hotspot read-out error (Hz).

    ``mode`` "extreme" reads the most deviating value near the hotspot,
    "center" the value at its centre.  Without ``reference`` the error is
    against the true hotspot BFS; with it, against the reference trace's
    centre value.
    """
    if mode not in ("extreme", "center"):
        raise ValueError(f"unknown read-out mode {mode!r}")
    out = []
    for start, length in fixture.hotspots:
        if mode == "center":
            measured = center_value(trace, start, length)
        else:
            measured = hotspot_value(trace, start, length, fixture.background_bfs, search_margin)
        if reference is None:
            target = fixture.background_bfs + fixture.contrast
        else:
            target = center_value(reference, start, length)
        out.append({"start_m": start, "length_m": length, "measured_hz": measured,
                    "target_hz": target, "error_hz": measured - target})
    return out


def edge_transition(trace: BfsTrace, edge_m: float, half_window_m: float = 1.5) -> float:
    """10-90 % length of the edge located near ``edge_m``."""
    pitch = trace.spatial_pitch
    lo = max(int(round((edge_m - half_window_m) / pitch)), 0)
    hi = min(int(round((edge_m + half_window_m) / pitch)) + 1, len(trace))
    return transition_length(trace, (lo, hi), plateau_samples=3, tolerance=0.1)


def rmse(pred: BfsTrace, truth: BfsTrace, region=None) -> float:
    if len(pred) != len(truth):
        raise ValueError(f"trace lengths differ: {len(pred)} vs {len(truth)}")
    sl = slice(None) if region is None else slice(*region)
    return float(np.sqrt(np.mean((pred.values[sl] - truth.values[sl]) ** 2)))


@dataclass
class MetricsReport:
    method: str
    pulse_width_s: float
    seed: int
    rmse_mhz: float
    masked_mse: float | None = None
    mean_uncertainty_mhz: float | None = None
    per_position_uncertainty_mhz: list | None = None
    hotspot_errors_mhz: list = field(default_factory=list)
    transition_lengths_m: list = field(default_factory=list)
    timing_s: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def scalars(self):
        return {
            "method": self.method,
            "pulse_width_s": self.pulse_width_s,
            "seed": self.seed,
            "rmse_mhz": self.rmse_mhz,
            "masked_mse": self.masked_mse,
            "mean_uncertainty_mhz": self.mean_uncertainty_mhz,
            "hotspot_errors_mhz": self.hotspot_errors_mhz,
            "transition_lengths_m": self.transition_lengths_m,
            "timing_s": self.timing_s,
            **self.extra,
        }


def evaluate(pred: BfsTrace, truth: BfsTrace, method: str, pulse_width_s: float, seed: int,
             repeats=None, bfs_range=None, margin: int = 20, region=None) -> MetricsReport:
    """Error metrics of ``pred`` against ``truth``; ``repeats`` (>= 2 traces)
    adds the per-position BFS uncertainty."""
    if len(pred) != len(truth):
        raise ValueError(f"trace lengths differ: {len(pred)} vs {len(truth)}")
    report = MetricsReport(method=method, pulse_width_s=pulse_width_s, seed=seed,
                           rmse_mhz=rmse(pred, truth, region) / MHZ)
    if bfs_range is not None:
        lo, hi = bfs_range
        width = len(pred)
        sl = slice(margin, width - margin)
        d = (pred.values[sl] - truth.values[sl]) / (hi - lo)
        report.masked_mse = float(np.mean(d**2))
    if repeats:
        sl = slice(None) if region is None else slice(*region)
        unc = bfs_uncertainty([BfsTrace(t.values[sl], t.spatial_pitch) for t in repeats])
        report.mean_uncertainty_mhz = unc.mean_std / MHZ
        report.per_position_uncertainty_mhz = (unc.per_position_std / MHZ).tolist()
    return report
