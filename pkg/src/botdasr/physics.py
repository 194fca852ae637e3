"""Long-pulse BOTDA gain simulation by concatenation of short fiber units.

Each 1 cm fiber unit contributes a transient Brillouin gain that builds up
with the acoustic decay rate while the pump pulse overlaps it.  The gain
recorded at round-trip position ``z`` is the sum of the contributions of the
units behind ``z`` that the pulse is still illuminating.

Units: frequencies in Hz, times in s, lengths in m.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

#: Linewidth used to pin the global gain calibration (Table-1 midpoint).
REFERENCE_LINEWIDTH = 30e6
#: Pulse width used to pin the global gain calibration.
REFERENCE_PULSE_WIDTH = 40e-9


class PhysicsError(ValueError):
    """Invalid physical input (domain or shape violation)."""


@dataclass(frozen=True)
class PhysicsConstants:
    group_velocity: float = 2.0e8
    unit_length: float = 0.01
    sample_rate: float = 1e9

    def __post_init__(self):
        for name in ("group_velocity", "unit_length", "sample_rate"):
            if not getattr(self, name) > 0:
                raise PhysicsError(f"{name} must be positive")
        ratio = self.spatial_pitch / self.unit_length
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise PhysicsError(
                f"spatial pitch {self.spatial_pitch} m is not a whole number of "
                f"{self.unit_length} m units"
            )

    @property
    def spatial_pitch(self) -> float:
        """Fiber length per trace sample, group_velocity / (2 sample_rate)."""
        return self.group_velocity / (2.0 * self.sample_rate)

    @property
    def units_per_sample(self) -> int:
        return int(round(self.spatial_pitch / self.unit_length))

    @property
    def unit_transit(self) -> float:
        """Time for light to cross one unit."""
        return self.unit_length / self.group_velocity


DEFAULT_CONSTANTS = PhysicsConstants()


@dataclass
class FiberProfile:
    """Per-unit fiber state: BFS (Hz), intrinsic linewidth (Hz), gain scale."""

    bfs: np.ndarray
    linewidth: np.ndarray
    gain_scale: np.ndarray
    length_m: float
    unit_length: float = 0.01

    def __post_init__(self):
        self.bfs = np.asarray(self.bfs, dtype=np.float64)
        self.linewidth = np.asarray(self.linewidth, dtype=np.float64)
        self.gain_scale = np.asarray(self.gain_scale, dtype=np.float64)
        n = int(round(self.length_m / self.unit_length))
        if n < 1:
            raise PhysicsError("fiber profile has zero length")
        for name in ("bfs", "linewidth", "gain_scale"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise PhysicsError(f"{name} has shape {arr.shape}, expected ({n},)")
        if np.any(self.bfs <= 0):
            raise PhysicsError("bfs must be positive")
        if np.any(self.linewidth <= 0):
            raise PhysicsError("linewidth must be positive")
        if np.any(self.gain_scale <= 0) or np.any(self.gain_scale > 1):
            raise PhysicsError("gain_scale must lie in (0, 1]")

    @property
    def n_units(self) -> int:
        return self.bfs.shape[0]

    @classmethod
    def uniform(cls, length_m, bfs, linewidth=30e6, gain_scale=1.0, unit_length=0.01):
        n = int(round(length_m / unit_length))
        return cls(
            bfs=np.full(n, float(bfs)),
            linewidth=np.full(n, float(linewidth)),
            gain_scale=np.full(n, float(gain_scale)),
            length_m=length_m,
            unit_length=unit_length,
        )

    @classmethod
    def from_sections(cls, sections, unit_length=0.01):
        """Build from ``[(length_m, bfs, linewidth, gain_scale), ...]``.

        Section boundaries are rounded to the unit grid.
        """
        edges = np.rint(np.cumsum([0.0] + [s[0] for s in sections]) / unit_length).astype(int)
        n = int(edges[-1])
        bfs, lw, gs = np.empty(n), np.empty(n), np.empty(n)
        for (_, b, w, g), lo, hi in zip(sections, edges[:-1], edges[1:]):
            bfs[lo:hi], lw[lo:hi], gs[lo:hi] = b, w, g
        return cls(bfs=bfs, linewidth=lw, gain_scale=gs, length_m=n * unit_length,
                   unit_length=unit_length)

    def bfs_at_samples(self, constants: PhysicsConstants = DEFAULT_CONSTANTS) -> np.ndarray:
        """BFS of the unit starting at each trace sample position."""
        return self.bfs[:: constants.units_per_sample].copy()


@dataclass(frozen=True)
class PumpPulse:
    width_s: float
    shape: str = "rectangular"

    def __post_init__(self):
        if not self.width_s > 0:
            raise PhysicsError("pulse width must be positive")
        if self.shape != "rectangular":
            raise PhysicsError(f"unsupported pulse shape {self.shape!r}")

    def length_m(self, constants: PhysicsConstants = DEFAULT_CONSTANTS) -> float:
        return self.width_s * constants.group_velocity


@dataclass(frozen=True)
class SweepGrid:
    start: float = 10.78e9
    step: float = 2e6
    count: int = 71

    def __post_init__(self):
        if not self.step > 0:
            raise PhysicsError("sweep step must be positive")
        if self.count < 2:
            raise PhysicsError("sweep needs at least two frequencies")

    @property
    def frequencies(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)

    @property
    def stop(self) -> float:
        return self.start + self.step * (self.count - 1)

    def shifted(self, delta: float) -> "SweepGrid":
        return SweepGrid(self.start + delta, self.step, self.count)

    def to_dict(self):
        return {"start": self.start, "step": self.step, "count": self.count}


@dataclass
class BGSFrame:
    """Gain matrix, rows = sweep frequencies, columns = fiber positions."""

    gain: np.ndarray
    sweep: SweepGrid
    spatial_pitch: float
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gain = np.asarray(self.gain)
        if self.gain.ndim != 2 or self.gain.shape[0] != self.sweep.count:
            raise PhysicsError(
                f"gain shape {self.gain.shape} does not match sweep of {self.sweep.count}"
            )
        if not np.all(np.isfinite(self.gain)):
            raise PhysicsError("frame contains non-finite gain")

    @property
    def width(self) -> int:
        return self.gain.shape[1]

    @property
    def positions(self) -> np.ndarray:
        return self.spatial_pitch * np.arange(self.width)

    def column(self, k: int) -> np.ndarray:
        return self.gain[:, k]


def detuning_parameter(v, v_b, linewidth):
    """Complex acoustic rate ``i*pi*(v_b^2 - v^2 - i*v*linewidth) / v`` in 1/s.

    The real part is ``pi*linewidth`` (the acoustic damping), the imaginary
    part carries the detuning.  Broadcasts over array arguments.
    """
    v = np.asarray(v, dtype=np.float64)
    v_b = np.asarray(v_b, dtype=np.float64)
    linewidth = np.asarray(linewidth, dtype=np.float64)
    if np.any(v <= 0) or np.any(v_b <= 0) or np.any(linewidth <= 0):
        raise PhysicsError("frequencies and linewidth must be positive")
    # (v_b - v)(v_b + v) keeps precision when v ~ v_b ~ 1e10
    return np.pi * linewidth + 1j * np.pi * (v_b - v) * (v_b + v) / v


def _steady_unit_response(v, v_b, linewidth):
    """Re{1/(2 Gamma)} without calibration."""
    return np.real(0.5 / detuning_parameter(v, v_b, linewidth))


def _elapsed_times(n_max: int, constants: PhysicsConstants) -> np.ndarray:
    """Time since pulse arrival for the N-th unit behind the sample, N = 1..n_max."""
    n = np.arange(1, n_max + 1)
    return (2 * n - 1) * constants.unit_transit


def _units_in_window(pulse: PumpPulse, constants: PhysicsConstants) -> int:
    """Number of units behind a sample whose gate is open, N >= 1 with elapsed < T."""
    # elapsed_N = (2N - 1) dz/Vg < T  <=>  N < (T Vg/dz + 1)/2
    bound = 0.5 * (pulse.width_s / constants.unit_transit + 1.0)
    n = int(np.ceil(bound - 1e-9)) - 1
    return max(n, 0)


@lru_cache(maxsize=32)
def calibration_constant(constants: PhysicsConstants = DEFAULT_CONSTANTS) -> float:
    """Global scale making a uniform fiber (gain_scale 1, 30 MHz linewidth)
    reach a plateau peak gain of exactly 1 under a 40 ns pulse."""
    n = _units_in_window(PumpPulse(REFERENCE_PULSE_WIDTH), constants)
    tau = _elapsed_times(n, constants)
    rate = np.pi * REFERENCE_LINEWIDTH
    raw = constants.unit_length * np.sum((1.0 - np.exp(-rate * tau)) / (2.0 * rate))
    return 1.0 / raw


def steady_state_spectrum(v, v_b, linewidth, constants: PhysicsConstants = DEFAULT_CONSTANTS):
    """Calibrated long-pulse limit of a single unit: a Lorentzian of FWHM ``linewidth``.

    Scaled per unit length so that a pulse covering ``L`` metres of uniform
    fiber approaches ``L * steady_state_spectrum`` in the long-pulse limit.
    """
    return calibration_constant(constants) * _steady_unit_response(v, v_b, linewidth)


def unit_gain(unit_index, t, v, profile: FiberProfile, pulse: PumpPulse,
              constants: PhysicsConstants = DEFAULT_CONSTANTS):
    """Real transient gain of one fiber unit at time ``t`` and sweep frequency ``v``."""
    if not 0 <= unit_index < profile.n_units:
        raise PhysicsError(f"unit index {unit_index} outside profile of {profile.n_units}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise PhysicsError("time must be non-negative")
    z = unit_index * constants.unit_length
    elapsed = t - (z + constants.unit_length) / constants.group_velocity
    gate = (elapsed >= 0) & (elapsed < pulse.width_s)
    gamma = detuning_parameter(v, profile.bfs[unit_index], profile.linewidth[unit_index])
    e = np.where(gate, elapsed, 0.0)
    value = (1.0 - np.exp(-gamma * e)) / (2.0 * gamma)
    scale = calibration_constant(constants) * profile.gain_scale[unit_index] * constants.unit_length
    return np.where(gate, scale * np.real(value), 0.0)


def _frame_gain(profile: FiberProfile, pulse: PumpPulse, freqs: np.ndarray,
                constants: PhysicsConstants) -> np.ndarray:
    if abs(profile.unit_length - constants.unit_length) > 1e-15:
        raise PhysicsError("profile unit length differs from simulation constants")
    n_units = profile.n_units
    ups = constants.units_per_sample
    n_samples = int(np.ceil(n_units / ups))
    n_win = _units_in_window(pulse, constants)
    out = np.zeros((freqs.shape[0], n_samples))
    if n_win == 0:
        return out

    scale = calibration_constant(constants) * constants.unit_length
    delta = constants.unit_transit
    sample_units = np.arange(n_samples) * ups
    # Within a run of identical units the transient terms form a geometric
    # series in N, so every run contributes in closed form.
    for lo, hi in _uniform_runs(profile):
        # samples whose window (units sample-n_win .. sample-1) meets [lo, hi)
        k_first = (lo + 1 + ups - 1) // ups
        k_last = min((hi - 1 + n_win) // ups, n_samples - 1)
        if k_last < k_first:
            continue
        ks = np.arange(k_first, k_last + 1)
        a = np.maximum(lo, sample_units[ks] - n_win)          # first unit used
        b = np.minimum(hi - 1, sample_units[ks] - 1)          # last unit used
        m0 = sample_units[ks] - b                             # smallest N
        count = (b - a + 1).astype(np.float64)

        gamma = detuning_parameter(freqs, profile.bfs[lo], profile.linewidth[lo])
        amp = scale * profile.gain_scale[lo] * 0.5 / gamma    # (F,)
        log_rho = -gamma * delta
        q_minus = -np.expm1(2.0 * log_rho)                    # 1 - rho^2
        head = np.exp(log_rho[None, :] * (2 * m0[:, None] - 1))
        tail = -np.expm1(2.0 * log_rho[None, :] * count[:, None])
        transient = head * tail / q_minus[None, :]
        contrib = amp[None, :] * (count[:, None] - transient)
        out[:, ks] += contrib.real.T
    return out


def _uniform_runs(profile: FiberProfile):
    """Half-open [lo, hi) index ranges of consecutive identical units."""
    change = (
        (np.diff(profile.bfs) != 0)
        | (np.diff(profile.linewidth) != 0)
        | (np.diff(profile.gain_scale) != 0)
    )
    edges = np.concatenate(([0], np.flatnonzero(change) + 1, [profile.n_units]))
    return zip(edges[:-1].tolist(), edges[1:].tolist())


def trace_at_frequency(profile: FiberProfile, pulse: PumpPulse, v: float,
                       constants: PhysicsConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Gain time series at one sweep frequency; sample ``k`` maps to z = k * pitch."""
    if profile.n_units == 0:
        raise PhysicsError("empty profile")
    return _frame_gain(profile, pulse, np.array([float(v)]), constants)[0]


def simulate_bgs(profile: FiberProfile, pulse: PumpPulse, sweep: SweepGrid,
                 constants: PhysicsConstants = DEFAULT_CONSTANTS,
                 check_coverage: bool = True) -> BGSFrame:
    """Simulate the un-normalized BGS frame, one row per sweep frequency."""
    if check_coverage:
        lo, hi = profile.bfs.min(), profile.bfs.max()
        if lo < sweep.start or hi > sweep.stop:
            raise PhysicsError(
                f"sweep [{sweep.start:.4e}, {sweep.stop:.4e}] Hz does not cover "
                f"profile BFS range [{lo:.4e}, {hi:.4e}] Hz"
            )
    gain = _frame_gain(profile, pulse, sweep.frequencies, constants)
    return BGSFrame(gain=gain, sweep=sweep, spatial_pitch=constants.spatial_pitch,
                    meta={"pulse_width_s": pulse.width_s})


def response_delay(pulse: PumpPulse, constants: PhysicsConstants = DEFAULT_CONSTANTS) -> float:
    """Distance (m) between a sample and the centre of the fiber stretch it integrates."""
    return 0.25 * pulse.length_m(constants)


@dataclass
class BfsTrace:
    """BFS (Hz) along the fiber at a fixed spatial pitch (m)."""

    values: np.ndarray
    spatial_pitch: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise PhysicsError("BFS trace must be one-dimensional")
        if not self.spatial_pitch > 0:
            raise PhysicsError("spatial pitch must be positive")

    def __len__(self):
        return self.values.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.spatial_pitch * np.arange(len(self))
