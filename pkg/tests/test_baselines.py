import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from botdasr.baselines import (
    FitError,
    GridMismatchError,
    LcfError,
    TransitionError,
    bfs_uncertainty,
    dpp_differential,
    lcf_trace,
    lorentz_fit,
    lorentzian,
    shift_trace,
    transition_length,
)
from botdasr.physics import BfsTrace, BGSFrame, FiberProfile, PumpPulse, SweepGrid, simulate_bgs

GRID = SweepGrid()


@settings(max_examples=40, deadline=None)
@given(
    bfs=st.floats(10.80e9, 10.90e9),
    fwhm=st.floats(20e6, 60e6),
    amp=st.floats(0.2, 2.0),
    offset=st.floats(-0.05, 0.05),
)
def test_exact_lorentzian_recovered(bfs, fwhm, amp, offset):
    y = lorentzian(GRID.frequencies, bfs, fwhm, amp, offset)
    p = lorentz_fit(y, GRID)
    assert p.ok
    assert abs(p.bfs - bfs) < 0.01e6
    assert p.fwhm == pytest.approx(fwhm, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(bfs=st.floats(10.82e9, 10.88e9), k=st.integers(-5, 5))
def test_shift_equivariance(bfs, k):
    delta = k * GRID.step
    y = lorentzian(GRID.frequencies, bfs, 35e6, 1.0)
    a = lorentz_fit(y, GRID).bfs
    b = lorentz_fit(y, GRID.shifted(delta)).bfs
    assert b - a == pytest.approx(delta, abs=1e-3)


def test_noisy_fit_is_unbiased_enough():
    rng = np.random.default_rng(0)
    errs = []
    for _ in range(50):
        y = lorentzian(GRID.frequencies, 10.85e9, 30e6, 1.0) + rng.normal(0, 0.03, GRID.count)
        errs.append(lorentz_fit(y, GRID).bfs - 10.85e9)
    assert abs(np.mean(errs)) < 0.3e6
    assert np.std(errs) < 1.5e6


def test_fit_rejects_flat_and_short():
    with pytest.raises(FitError):
        lorentz_fit(np.zeros(GRID.count), GRID)
    with pytest.raises(FitError):
        lorentz_fit(np.ones(4), SweepGrid(count=4))
    with pytest.raises(FitError):
        lorentz_fit(np.full(GRID.count, np.nan), GRID)


def test_lcf_on_uniform_fiber_recovers_bfs():
    frame = simulate_bgs(FiberProfile.uniform(20.0, 10.85e9), PumpPulse(40e-9), GRID)
    tr = lcf_trace(frame)
    # transient spectra are only near-Lorentzian: tens of kHz of fit bias
    np.testing.assert_allclose(tr.values[30:], 10.85e9, atol=0.1e6)
    # sample 0 has no fiber behind it yet, so its column is empty
    assert tr.meta["failed_columns"] == [0]


def test_lcf_interpolates_failed_columns_and_raises_when_too_many():
    g = np.stack([lorentzian(GRID.frequencies, 10.85e9, 30e6, 1.0)] * 50, axis=1)
    g[:, 10] = 0.0
    tr = lcf_trace(BGSFrame(g, GRID, 0.1))
    assert tr.meta["failed_columns"] == [10]
    assert tr.values[10] == pytest.approx(10.85e9, abs=1e3)
    g[:, :10] = 0.0
    with pytest.raises(LcfError):
        lcf_trace(BGSFrame(g, GRID, 0.1))


def test_dpp_checks_grids():
    prof = FiberProfile.uniform(10.0, 10.85e9)
    a = simulate_bgs(prof, PumpPulse(45e-9), GRID)
    b = simulate_bgs(prof, PumpPulse(40e-9), GRID)
    d = dpp_differential(a, b)
    assert d.meta["pulse_width_s"] == pytest.approx(5e-9)
    np.testing.assert_allclose(d.gain, a.gain - b.gain)
    with pytest.raises(GridMismatchError):
        dpp_differential(a, simulate_bgs(prof, PumpPulse(40e-9), GRID.shifted(2e6)))
    with pytest.raises(GridMismatchError):
        dpp_differential(a, a)
    short = simulate_bgs(FiberProfile.uniform(5.0, 10.85e9), PumpPulse(40e-9), GRID)
    with pytest.raises(GridMismatchError):
        dpp_differential(a, short)


def test_uncertainty_is_sample_std():
    rng = np.random.default_rng(2)
    traces = [BfsTrace(10.85e9 + rng.normal(0, 1e6, 500), 0.1) for _ in range(6)]
    rep = bfs_uncertainty(traces)
    stack = np.stack([t.values for t in traces])
    np.testing.assert_allclose(rep.per_position_std, stack.std(axis=0, ddof=1))
    assert rep.n_traces == 6
    with pytest.raises(ValueError):
        bfs_uncertainty(traces[:1])
    with pytest.raises(ValueError):
        bfs_uncertainty([traces[0], BfsTrace(traces[1].values[:10], 0.1)])


def test_transition_length_of_linear_ramp():
    v = np.concatenate([np.zeros(10), np.linspace(0, 1, 11), np.ones(10)])
    # ramp over 10 samples of 0.1 m: 10-90 % spans 0.8 m
    assert transition_length(BfsTrace(v, 0.1)) == pytest.approx(0.8)
    with pytest.raises(TransitionError):
        transition_length(BfsTrace(np.ones(20), 0.1))
    with pytest.raises(TransitionError):
        transition_length(BfsTrace(np.sin(np.linspace(0, 9, 40)), 0.1))


def test_shift_trace_moves_toward_start():
    tr = BfsTrace(np.arange(10.0), 0.1)
    s = shift_trace(tr, 0.3)
    np.testing.assert_array_equal(s.values, [3, 4, 5, 6, 7, 8, 9, 9, 9, 9])
    np.testing.assert_array_equal(shift_trace(tr, -0.2).values[:3], [0, 0, 0])
