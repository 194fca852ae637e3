"""Classical BFS extraction: Lorentzian curve fitting, DPP, and SR/uncertainty metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .physics import BfsTrace, BGSFrame, SweepGrid

MAX_ITERATIONS = 200
REL_COST_TOL = 1e-10
MAX_FAILED_FRACTION = 0.10


class FitError(ValueError):
    """Spectrum cannot be fitted at all (flat, too short, no positive peak)."""


class LcfError(RuntimeError):
    """Too many columns of a frame failed to fit."""


class GridMismatchError(ValueError):
    pass


class TransitionError(ValueError):
    """No measurable plateau-to-plateau edge in the requested window."""


@dataclass
class LorentzParams:
    bfs: float
    fwhm: float
    amplitude: float
    offset: float
    converged: bool = True
    iterations: int = 0
    cost: float = 0.0

    @property
    def ok(self) -> bool:
        return bool(self.converged and self.fwhm > 0 and self.amplitude > 0
                    and np.isfinite(self.bfs))


def lorentzian(v, bfs, fwhm, amplitude, offset=0.0):
    return amplitude / (1.0 + 4.0 * (np.asarray(v) - bfs) ** 2 / fwhm**2) + offset


def _model_and_jacobian(x, p):
    # p columns: centre, fwhm, amplitude, offset (all in grid-relative units)
    d = x[None, :] - p[:, 0:1]
    w = p[:, 1:2]
    a = p[:, 2:3]
    shape = 1.0 / (1.0 + 4.0 * d**2 / w**2)
    model = a * shape + p[:, 3:4]
    jac = np.empty(d.shape + (4,))
    jac[..., 0] = a * shape**2 * 8.0 * d / w**2
    jac[..., 1] = a * shape**2 * 8.0 * d**2 / w**3
    jac[..., 2] = shape
    jac[..., 3] = 1.0
    return model, jac


def _initial_guess(x, y):
    idx = np.argmax(y, axis=1)
    ymax = y[np.arange(y.shape[0]), idx]
    ymin = y.min(axis=1)
    amp = ymax - ymin
    half = ymin + 0.5 * amp
    step = x[1] - x[0]
    above = (y >= half[:, None]).sum(axis=1)
    width = np.maximum(above * step, 2 * step)
    return np.stack([x[idx], width, amp, ymin], axis=1)


def fit_lorentzians(spectra: np.ndarray, grid: SweepGrid):
    """Fit many spectra (rows) at once with a damped Gauss-Newton iteration.

    Returns ``(params, converged, iterations, cost)`` where ``params`` columns
    are bfs (Hz), fwhm (Hz), amplitude, offset.
    """
    y = np.atleast_2d(np.asarray(spectra, dtype=np.float64))
    if y.shape[1] != grid.count:
        raise FitError(f"spectrum length {y.shape[1]} != grid count {grid.count}")
    if grid.count < 5:
        raise FitError("need at least 5 sweep points")
    # frequency measured in sweep steps from the first point keeps J well scaled
    x = np.arange(grid.count, dtype=np.float64)
    p = _initial_guess(x, y)
    m = y.shape[0]
    lam = np.full(m, 1e-3)
    model, jac = _model_and_jacobian(x, p)
    resid = model - y
    cost = 0.5 * np.sum(resid**2, axis=1)
    active = np.ones(m, dtype=bool)
    converged = np.zeros(m, dtype=bool)
    iters = np.zeros(m, dtype=int)
    eye = np.eye(4)

    for _ in range(MAX_ITERATIONS):
        if not active.any():
            break
        ia = np.flatnonzero(active)
        iters[ia] += 1
        j = jac[ia]
        jtj = np.einsum("mfi,mfj->mij", j, j)
        jtr = np.einsum("mfi,mf->mi", j, resid[ia])
        diag = np.einsum("mii->mi", jtj)[:, :, None] * eye
        damped = jtj + lam[ia, None, None] * (diag + 1e-12 * eye)
        try:
            delta = -np.linalg.solve(damped, jtr[..., None])[..., 0]
        except np.linalg.LinAlgError:
            delta = -np.stack([np.linalg.lstsq(d, r, rcond=None)[0] for d, r in zip(damped, jtr)])
        trial = p[ia] + delta
        trial[:, 1] = np.abs(trial[:, 1])
        t_model, t_jac = _model_and_jacobian(x, trial)
        t_resid = t_model - y[ia]
        t_cost = 0.5 * np.sum(t_resid**2, axis=1)
        better = np.isfinite(t_cost) & (t_cost <= cost[ia])

        acc = ia[better]
        rel = (cost[acc] - t_cost[better]) / np.maximum(cost[acc], 1e-300)
        p[acc] = trial[better]
        jac[acc] = t_jac[better]
        resid[acc] = t_resid[better]
        cost[acc] = t_cost[better]
        lam[acc] = np.maximum(lam[acc] / 3.0, 1e-12)
        done = acc[(rel < REL_COST_TOL) | (t_cost[better] <= 1e-30)]
        converged[done] = True
        active[done] = False

        rej = ia[~better]
        lam[rej] *= 4.0
        stuck = rej[lam[rej] > 1e12]
        # damping exhausted at a stationary point: no further descent exists
        converged[stuck] = True
        active[stuck] = False

    params = np.empty_like(p)
    params[:, 0] = grid.start + p[:, 0] * grid.step
    params[:, 1] = p[:, 1] * grid.step
    params[:, 2] = p[:, 2]
    params[:, 3] = p[:, 3]
    return params, converged, iters, cost


def lorentz_fit(spectrum, grid: SweepGrid) -> LorentzParams:
    """Least-squares fit of ``amplitude / (1 + 4 (v - bfs)^2 / fwhm^2) + offset``."""
    y = np.asarray(spectrum, dtype=np.float64)
    if y.ndim != 1:
        raise FitError("lorentz_fit takes a single spectrum")
    if grid.count < 5:
        raise FitError("need at least 5 sweep points")
    if not np.all(np.isfinite(y)):
        raise FitError("spectrum contains non-finite values")
    if np.ptp(y) <= 0 or y.max() <= 0:
        raise FitError("spectrum is flat or has no positive peak")
    params, conv, iters, cost = fit_lorentzians(y[None, :], grid)
    bfs, fwhm, amp, off = params[0]
    return LorentzParams(float(bfs), float(fwhm), float(amp), float(off),
                         bool(conv[0]), int(iters[0]), float(cost[0]))


def lcf_trace(frame: BGSFrame) -> BfsTrace:
    """Per-column Lorentzian fit.  Failed columns are interpolated from their
    neighbours and listed in ``meta["failed_columns"]``."""
    spectra = frame.gain.T.astype(np.float64)
    fittable = (np.ptp(spectra, axis=1) > 0) & (spectra.max(axis=1) > 0)
    bfs = np.full(frame.width, np.nan)
    ok = np.zeros(frame.width, dtype=bool)
    idx = np.flatnonzero(fittable)
    if idx.size:
        params, conv, _, _ = fit_lorentzians(spectra[idx], frame.sweep)
        good = (
            conv
            & (params[:, 1] > 0)
            & (params[:, 2] > 0)
            & (params[:, 0] >= frame.sweep.start)
            & (params[:, 0] <= frame.sweep.stop)
        )
        bfs[idx[good]] = params[good, 0]
        ok[idx[good]] = True
    failed = np.flatnonzero(~ok)
    if failed.size > MAX_FAILED_FRACTION * frame.width:
        raise LcfError(f"{failed.size} of {frame.width} columns failed to fit")
    if failed.size:
        good_idx = np.flatnonzero(ok)
        bfs[failed] = np.interp(failed, good_idx, bfs[good_idx])
    meta = dict(frame.meta, method="lcf", failed_columns=failed.tolist())
    return BfsTrace(bfs, frame.spatial_pitch, meta)


def dpp_differential(frame_long: BGSFrame, frame_short: BGSFrame) -> BGSFrame:
    """Differential frame (long minus short) from two un-normalized frames."""
    a, b = frame_long, frame_short
    if a.sweep != b.sweep:
        raise GridMismatchError("sweep grids differ")
    if abs(a.spatial_pitch - b.spatial_pitch) > 1e-12:
        raise GridMismatchError("spatial pitches differ")
    if a.gain.shape != b.gain.shape:
        raise GridMismatchError(f"frame shapes differ: {a.gain.shape} vs {b.gain.shape}")
    wa, wb = a.meta.get("pulse_width_s"), b.meta.get("pulse_width_s")
    if wa is not None and wb is not None and wa == wb:
        raise GridMismatchError("DPP needs two different pulse widths")
    meta = {"method": "dpp"}
    if wa is not None and wb is not None:
        meta.update(pulse_width_s=wa - wb, pulse_pair_s=[wa, wb])
    return BGSFrame(a.gain - b.gain, a.sweep, a.spatial_pitch, normalized=False, meta=meta)


@dataclass
class UncertaintyReport:
    per_position_std: np.ndarray
    mean_std: float
    spatial_pitch: float
    n_traces: int = 0
    meta: dict = field(default_factory=dict)


def bfs_uncertainty(traces) -> UncertaintyReport:
    """Per-position sample standard deviation across repeated measurements."""
    traces = list(traces)
    if len(traces) < 2:
        raise ValueError("BFS uncertainty needs at least two traces")
    lengths = {len(t) for t in traces}
    if len(lengths) != 1:
        raise ValueError(f"trace lengths differ: {sorted(lengths)}")
    stack = np.stack([t.values for t in traces])
    std = stack.std(axis=0, ddof=1)
    return UncertaintyReport(std, float(std.mean()), traces[0].spatial_pitch, len(traces))


def transition_length(trace: BfsTrace, edge_window=None, plateau_samples: int = 1,
                      tolerance: float = 0.02) -> float:
    """10-90 % rise distance (m) of the single edge inside ``edge_window``.

    ``edge_window`` is a ``(start, stop)`` sample slice whose ends sit on the
    two plateaus; plateau levels are the means of ``plateau_samples`` samples at
    each end.  Crossings are linearly interpolated.
    """
    start, stop = (0, len(trace)) if edge_window is None else edge_window
    seg = trace.values[start:stop]
    if seg.size < 2 * plateau_samples + 1:
        raise TransitionError("window too short")
    lo = seg[:plateau_samples].mean()
    hi = seg[-plateau_samples:].mean()
    step = hi - lo
    if abs(step) <= 1e-9 * max(abs(lo), abs(hi), 1.0):
        raise TransitionError("no edge: plateaus are equal")
    f = (seg - lo) / step
    if np.any(f < np.maximum.accumulate(f) - tolerance):
        raise TransitionError("window is not monotone between its plateaus")
    i90 = int(np.argmax(f >= 0.9))
    below = np.flatnonzero(f[:i90] < 0.1)
    if below.size == 0:
        raise TransitionError("edge starts before the window")
    i10 = int(below[-1])

    def crossing(i, level):
        return i + (level - f[i]) / (f[i + 1] - f[i])

    x10 = crossing(i10, 0.1)
    x90 = crossing(i90 - 1, 0.9) if i90 > 0 else 0.0
    return float((x90 - x10) * trace.spatial_pitch)


def shift_trace(trace: BfsTrace, distance_m: float) -> BfsTrace:
    """Move a trace ``distance_m`` towards the fiber start (edge-replicated)."""
    n = int(round(distance_m / trace.spatial_pitch))
    v = trace.values
    if n > 0:
        v = np.concatenate([v[n:], np.full(n, v[-1])])
    elif n < 0:
        v = np.concatenate([np.full(-n, v[0]), v[:n]])
    return BfsTrace(v.copy(), trace.spatial_pitch, dict(trace.meta, shift_m=n * trace.spatial_pitch))
