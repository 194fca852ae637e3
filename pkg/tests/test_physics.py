import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from botdasr.baselines import fit_lorentzians
from botdasr.physics import (
    DEFAULT_CONSTANTS,
    BfsTrace,
    BGSFrame,
    FiberProfile,
    PhysicsConstants,
    PhysicsError,
    PumpPulse,
    SweepGrid,
    calibration_constant,
    detuning_parameter,
    response_delay,
    simulate_bgs,
    steady_state_spectrum,
    trace_at_frequency,
    unit_gain,
)

C = DEFAULT_CONSTANTS


def brute_force(profile, pulse, v):
    """Sum unit_gain over every unit behind each sample at its own arrival time."""
    ups = C.units_per_sample
    n_samples = int(np.ceil(profile.n_units / ups))
    out = np.zeros(n_samples)
    for k in range(n_samples):
        s = k * ups
        for n in range(1, s + 1):
            t = (s + n) * C.unit_length / C.group_velocity
            out[k] += unit_gain(s - n, t, v, profile, pulse)
    return out


def interior_fwhm(frame, lo=60, hi=-60):
    params, conv, _, _ = fit_lorentzians(frame.gain[:, lo:hi].T, frame.sweep)
    assert conv.all()
    return params[:, 1].mean()


def test_detuning_on_resonance_is_damping():
    g = detuning_parameter(10.85e9, 10.85e9, 30e6)
    assert g.imag == 0
    assert g.real == pytest.approx(np.pi * 30e6)


def test_detuning_rejects_nonpositive():
    with pytest.raises(PhysicsError):
        detuning_parameter(0.0, 10.85e9, 30e6)
    with pytest.raises(PhysicsError):
        detuning_parameter(10.85e9, 10.85e9, -1.0)


def test_steady_state_is_lorentzian_with_linewidth_fwhm():
    vb, lw = 10.85e9, 30e6
    peak = steady_state_spectrum(vb, vb, lw)
    for side in (-1, 1):
        half = steady_state_spectrum(vb + side * lw / 2, vb, lw)
        assert half / peak == pytest.approx(0.5, rel=1e-3)


def test_calibration_puts_40ns_plateau_at_one():
    prof = FiberProfile.uniform(20.0, 10.85e9)
    tr = trace_at_frequency(prof, PumpPulse(40e-9), 10.85e9)
    assert tr[100:].max() == pytest.approx(1.0, rel=1e-9)
    assert calibration_constant() > 0


def test_unit_gain_gated_outside_pulse_window():
    prof = FiberProfile.uniform(1.0, 10.85e9)
    pulse = PumpPulse(10e-9)
    arrival = (5 + 1) * C.unit_length / C.group_velocity
    assert unit_gain(5, arrival - 1e-12, 10.85e9, prof, pulse) == 0.0
    assert unit_gain(5, arrival + 10e-9, 10.85e9, prof, pulse) == 0.0
    assert unit_gain(5, arrival + 5e-9, 10.85e9, prof, pulse) > 0.0
    with pytest.raises(PhysicsError):
        unit_gain(100, 0.0, 10.85e9, prof, pulse)


@settings(max_examples=15, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    width_ns=st.sampled_from([5, 10, 20, 40]),
    v=st.floats(10.80e9, 10.90e9),
)
def test_closed_form_matches_brute_force(seed, width_ns, v):
    rng = np.random.default_rng(seed)
    sections = [(float(rng.uniform(0.05, 1.5)), float(rng.uniform(10.82e9, 10.88e9)),
                 float(rng.uniform(20e6, 40e6)), float(rng.uniform(0.5, 1.0))) for _ in range(4)]
    prof = FiberProfile.from_sections(sections)
    pulse = PumpPulse(width_ns * 1e-9)
    fast = trace_at_frequency(prof, pulse, v)
    slow = brute_force(prof, pulse, v)
    np.testing.assert_allclose(fast, slow, rtol=1e-9, atol=1e-12 * np.abs(slow).max())


def test_sample_response_ends_after_half_pulse_length():
    # a sample integrates the fiber stretch [z - l/2, z]
    prof = FiberProfile.uniform(30.0, 10.85e9)
    prof.bfs[1500:] = 10.87e9
    pulse = PumpPulse(20e-9)  # l = 4 m
    a = trace_at_frequency(prof, pulse, 10.87e9)
    base = trace_at_frequency(FiberProfile.uniform(30.0, 10.85e9), pulse, 10.87e9)
    changed = np.flatnonzero(np.abs(a - base) > 1e-12)
    assert changed[0] == 151
    assert a[150 + 20] == pytest.approx(a[-1])
    assert response_delay(pulse) == pytest.approx(1.0)


def test_broadening_monotone_in_pulse_width():
    prof = FiberProfile.uniform(20.0, 10.85e9)
    widths = [interior_fwhm(simulate_bgs(prof, PumpPulse(w), SweepGrid())) for w in (10e-9, 40e-9, 100e-9)]
    assert widths[0] > widths[1] > widths[2] > 30e6


def test_long_pulse_converges_to_steady_state():
    prof = FiberProfile.uniform(60.0, 10.85e9)
    sweep = SweepGrid()
    ref = steady_state_spectrum(sweep.frequencies, 10.85e9, 30e6)
    errs = []
    for w in (50e-9, 100e-9, 200e-9):
        frame = simulate_bgs(prof, PumpPulse(w), sweep)
        col = frame.gain[:, -1] / frame.gain[:, -1].max()
        errs.append(np.abs(col - ref / ref.max()).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.03


def test_zero_linewidth_and_bad_profiles_rejected():
    with pytest.raises(PhysicsError):
        FiberProfile.uniform(1.0, 10.85e9, linewidth=0.0)
    with pytest.raises(PhysicsError):
        FiberProfile.uniform(0.0, 10.85e9)
    with pytest.raises(PhysicsError):
        PumpPulse(-1e-9)


def test_sweep_must_cover_profile():
    prof = FiberProfile.uniform(5.0, 10.95e9)
    with pytest.raises(PhysicsError):
        simulate_bgs(prof, PumpPulse(40e-9), SweepGrid())


def test_pitch_must_be_unit_multiple():
    with pytest.raises(PhysicsError):
        PhysicsConstants(unit_length=0.03)


def test_frame_shape_and_positions():
    prof = FiberProfile.uniform(54.0, 10.85e9)
    frame = simulate_bgs(prof, PumpPulse(40e-9), SweepGrid())
    assert frame.gain.shape == (71, 540)
    assert frame.positions[1] == pytest.approx(0.1)
    assert isinstance(frame, BGSFrame)
    assert len(BfsTrace(prof.bfs_at_samples(), 0.1)) == 540


@settings(max_examples=20, deadline=None)
@given(st.floats(-6e6, 6e6))
def test_sweep_shift_equivariance(delta):
    # shifting BFS and the sweep together leaves the frame unchanged (to the
    # small 1/v dependence of the detuning parameter)
    prof = FiberProfile.uniform(5.0, 10.85e9)
    moved = FiberProfile.uniform(5.0, 10.85e9 + delta)
    a = simulate_bgs(prof, PumpPulse(20e-9), SweepGrid())
    b = simulate_bgs(moved, PumpPulse(20e-9), SweepGrid().shifted(delta))
    np.testing.assert_allclose(a.gain, b.gain, rtol=2e-3, atol=1e-6)
