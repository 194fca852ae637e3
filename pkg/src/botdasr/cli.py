"""Command-line runs: simulation, dataset generation, training, inference,
classical baselines, the hotspot fixture, evaluation and benchmarks.

Every command takes ``--config`` (JSON), ``--seed``, ``--out`` and ``--scale``.
Outputs carry the resolved config digest and the seed; CSV files put them in
``#`` comment lines at the top.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("botdasr")


class ConfigError(ValueError):
    pass


# scale presets; "desk" is the CPU-sized network on 12.8 m windows
SCALES = {
    "desk": {"window_m": 12.8, "lead_in_m": 4.0, "n_samples": 2000, "window": 128},
    "full": {"window_m": 54.0, "lead_in_m": 0.0, "n_samples": 10000, "window": 540},
}

DEFAULTS = {
    "simulate": {
        "fiber": {"length_m": 54.0, "bfs": 10.85e9, "linewidth": 30e6, "gain_scale": 1.0},
        "pulse_width_s": 40e-9,
        "sweep": {"start": 10.78e9, "step": 2e6, "count": 71},
        "noise_variance": 0.0,
        "n_avg": 1,
        "normalize": False,
        "target_sr": 0.5,
        "bfs_range": [10.81e9, 10.89e9],
        "spectra_positions_m": [],
    },
    "gen-dataset": {"n": None, "dataset": {}},
    "train": {"lr": 1e-3, "lr_schedule": "constant", "batch_size": 16, "max_epochs": 100, "patience": 10,
              "loss_margin": 20, "time_budget_s": None, "val_fraction": 0.1},
    "infer": {"window": None, "margin": 20, "stride": None},
    "lcf": {"align": True},
    "dpp": {"align": True},
    "hotspot-fixture": {
        "fixture": {},
        "pulse_widths_s": [20e-9, 30e-9, 40e-9, 45e-9, 50e-9],
        "sweep": {"start": 10.78e9, "step": 2e6, "count": 71},
        "noise_variance": 0.001,
        "n_avg": 64,
        "repeats": 6,
        "target_sr": 0.5,
        "bfs_range": [10.81e9, 10.89e9],
    },
    "eval": {"fixture": None, "search_margin_m": 0.5, "edge_half_window_m": 1.5},
    "bench": {"n_frames": 100, "batch_size": 100},
    "grad-check": {"n_seeds": 20, "tolerance": 1e-4, "layers": None},
}

HELP = {
    "simulate": "simulate one BGS frame (optionally noisy and normalized)",
    "gen-dataset": "generate a seeded training dataset with manifest",
    "train": "train the SR network from a dataset directory",
    "infer": "retrieve BFS traces from frames with a trained checkpoint",
    "lcf": "Lorentzian curve fitting per column",
    "dpp": "differential pulse-pair reconstruction from long/short frames",
    "hotspot-fixture": "simulate the hotspot fiber at several pulse widths with repeats",
    "eval": "metrics of predicted traces against a reference trace",
    "bench": "time network inference and LCF on the same frames",
    "grad-check": "finite-difference checks of every network layer",
}


def _merge(base, override):
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(command, path, scale):
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(user) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg = _merge(cfg, user)
    cfg["scale"] = scale
    return cfg


class Run:
    """Output sink for one command: digest + seed stamped into every file."""

    def __init__(self, command, config, seed, out):
        from .dataset import config_digest

        self.command = command
        self.config = config
        self.seed = seed
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.digest = config_digest({"command": command, **config})
        self.timing = {}

    def stamp(self):
        return {"command": self.command, "config_digest": self.digest, "seed": self.seed}

    def write_csv(self, name, header, rows):
        buf = io.StringIO()
        buf.write(f"# config_digest: {self.digest}\n# seed: {self.seed}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
        (self.out / name).write_text(buf.getvalue())

    def write_json(self, name, payload):
        data = dict(self.stamp(), config=self.config, **payload)
        (self.out / name).write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def write_report(self, payload):
        """Scalars go to report.json; wall-clock timing lives only here."""
        self.write_json("report.json", dict(payload, timing_s=self.timing))


def _jsonable(v):
    import numpy as np

    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v)}")


# frame files reuse the dataset sample layout: input = gain, label = smoothed
# normalized BFS, truth = BFS in Hz


def save_frame(path, frame, truth, label, meta):
    import numpy as np

    from .dataset import DatasetSample, write_sample

    meta = dict(frame.meta, **meta, sweep=frame.sweep.to_dict(), spatial_pitch=frame.spatial_pitch,
                normalized=bool(frame.normalized))
    write_sample(path, DatasetSample(frame.gain.astype(np.float32), np.asarray(label, np.float32),
                                     np.asarray(truth, np.float64), meta))


def load_frame(path):
    from .dataset import read_sample
    from .physics import BGSFrame, SweepGrid

    sample = read_sample(path)
    meta = dict(sample.meta)
    sweep = SweepGrid(**meta["sweep"])
    # dataset samples are stored normalized and carry no flag
    normalized = bool(meta.get("normalized", True))
    frame = BGSFrame(sample.input.astype("float64"), sweep, meta["spatial_pitch"],
                     normalized=normalized, meta=meta)
    return frame, sample


def _label_for(profile, target_sr, bfs_range, constants):
    from .dataset import smooth_label
    from .physics import BfsTrace

    smooth = smooth_label(BfsTrace(profile.bfs, constants.unit_length), target_sr)
    lo, hi = bfs_range
    return (smooth.values[:: constants.units_per_sample] - lo) / (hi - lo)


def _profile_from(fiber):
    from .physics import FiberProfile

    if "sections" in fiber:
        return FiberProfile.from_sections([tuple(s) for s in fiber["sections"]])
    return FiberProfile.uniform(fiber["length_m"], fiber["bfs"], fiber.get("linewidth", 30e6),
                                fiber.get("gain_scale", 1.0))


def _read_trace_csv(path):
    import numpy as np

    from .physics import BfsTrace

    try:
        rows = [r for r in csv.reader(l for l in Path(path).read_text().splitlines()
                                      if not l.startswith("#"))]
    except OSError as exc:
        raise FileNotFoundError(str(exc)) from exc
    if len(rows) < 3:
        raise ValueError(f"{path}: trace CSV needs a header and at least two rows")
    body = np.array([[float(v) for v in r[:2]] for r in rows[1:]])
    pitch = float(body[1, 0] - body[0, 0])
    return BfsTrace(body[:, 1], pitch, {"source": str(path)})


def _write_trace(run, name, trace):
    run.write_csv(name, ["position_m", "bfs_hz"], zip(trace.positions.tolist(), trace.values.tolist()))


# commands ------------------------------------------------------------------


def cmd_simulate(run, args):
    import numpy as np

    from .dataset import normalize_frame
    from .evaluation import simulate_measurement
    from .physics import DEFAULT_CONSTANTS, PumpPulse, SweepGrid, simulate_bgs

    cfg = run.config
    profile = _profile_from(cfg["fiber"])
    sweep = SweepGrid(**cfg["sweep"])
    t0 = time.perf_counter()
    clean = simulate_bgs(profile, PumpPulse(cfg["pulse_width_s"]), sweep)
    rng = np.random.default_rng(run.seed)
    frame = simulate_measurement(profile, cfg["pulse_width_s"], sweep, cfg["noise_variance"],
                                 cfg["n_avg"], rng, clean=clean)
    if cfg["normalize"]:
        frame = normalize_frame(frame)
    run.timing["simulate"] = time.perf_counter() - t0
    label = _label_for(profile, cfg["target_sr"], cfg["bfs_range"], DEFAULT_CONSTANTS)
    save_frame(run.out / "frame.bin", frame, profile.bfs_at_samples(), label,
               dict(run.stamp(), bfs_range=cfg["bfs_range"]))
    if cfg["spectra_positions_m"]:
        cols = [int(round(p / frame.spatial_pitch)) for p in cfg["spectra_positions_m"]]
        if any(c < 0 or c >= frame.width for c in cols):
            raise ConfigError("spectrum position outside the fiber")
        rows = [[f] + [float(frame.gain[i, c]) for c in cols]
                for i, f in enumerate(sweep.frequencies.tolist())]
        run.write_csv("spectra.csv", ["frequency_hz"] + [f"z_{p}m" for p in cfg["spectra_positions_m"]], rows)
    run.write_report({"width": frame.width, "files": ["frame.bin"]})


def _dataset_config(cfg, scale):
    from .dataset import DatasetConfig

    preset = SCALES[scale]
    d = json.loads(json.dumps(cfg.get("dataset", {})))
    d.setdefault("ranges", {}).setdefault("total_length", preset["window_m"])
    d.setdefault("lead_in_m", preset["lead_in_m"])
    return DatasetConfig.from_dict(d)


def cmd_gen_dataset(run, args):
    from .dataset import generate_dataset

    config = _dataset_config(run.config, run.config["scale"])
    n = run.config["n"] or SCALES[run.config["scale"]]["n_samples"]
    t0 = time.perf_counter()
    generate_dataset(config, run.seed, n, run.out)
    run.timing["generate"] = time.perf_counter() - t0
    run.write_report({"count": n, "dataset_digest": config.digest()})


def cmd_train(run, args):
    import numpy as np

    from .dataset import load_dataset, load_manifest, stack_samples
    from .srnet import (ModelConfig, TrainHyper, build_model, history_csv, save_checkpoint,
                        strip_timing, train)

    if not args.data:
        raise ConfigError("train needs --data")
    cfg = run.config
    manifest = load_manifest(args.data)
    samples = load_dataset(args.data)
    if args.val:
        val = load_dataset(args.val)
    else:
        n_val = max(int(round(cfg["val_fraction"] * len(samples))), 2)
        if n_val >= len(samples) - 1:
            raise ConfigError("dataset too small for a validation split")
        samples, val = samples[:-n_val], samples[-n_val:]
    model = build_model(ModelConfig.for_scale(cfg["scale"]), np.random.default_rng(run.seed))
    if cfg["lr_schedule"] not in ("constant", "cosine"):
        raise ConfigError(f"lr_schedule must be 'constant' or 'cosine', got {cfg['lr_schedule']!r}")
    hyper = TrainHyper(lr=cfg["lr"], batch_size=cfg["batch_size"], max_epochs=cfg["max_epochs"],
                       patience=cfg["patience"], loss_margin=cfg["loss_margin"], seed=run.seed,
                       time_budget_s=cfg["time_budget_s"], lr_schedule=cfg["lr_schedule"],
                       checked=True)
    bfs_range = tuple(manifest["ranges"]["bfs_range"])
    t0 = time.perf_counter()
    ckpt = train(model, stack_samples(samples), stack_samples(val), hyper, bfs_range)
    run.timing["train"] = time.perf_counter() - t0
    run.timing["epochs"] = [{"elapsed_s": h["elapsed_s"], "cpu_s": h["cpu_s"]} for h in ckpt.history]
    # checkpoints stay byte-reproducible: clock readings go to the report only
    ckpt.history = strip_timing(ckpt.history)
    ckpt.seeds.update(init=run.seed)
    ckpt.extra.update(run.stamp(), dataset_digest=manifest["config_digest"],
                      window=int(samples[0].input.shape[1]))
    save_checkpoint(run.out / "model.ckpt", ckpt)
    (run.out / "history.csv").write_text(
        f"# config_digest: {run.digest}\n# seed: {run.seed}\n" + history_csv(ckpt.history))
    run.write_report({"best_epoch": ckpt.extra["best_epoch"], "best_val_mse": ckpt.extra["best_val_mse"],
                      "epochs": len(ckpt.history), "n_parameters": model.n_parameters()})


def _frames_arg(args):
    if not args.frame:
        raise ConfigError("--frame is required")
    return [Path(p) for p in args.frame]


def cmd_infer(run, args):
    from .dataset import normalize_frame
    from .srnet import infer_long, load_checkpoint

    if not args.checkpoint:
        raise ConfigError("infer needs --checkpoint")
    ckpt = load_checkpoint(args.checkpoint)
    window = run.config["window"] or ckpt.extra.get("window") or SCALES[run.config["scale"]]["window"]
    written = []
    t0 = time.perf_counter()
    for i, path in enumerate(_frames_arg(args)):
        frame, _ = load_frame(path)
        if not frame.normalized:
            frame = normalize_frame(frame)
        trace = infer_long(ckpt.model, frame.gain, ckpt.bfs_range, window=window,
                           margin=run.config["margin"], stride=run.config["stride"],
                           spatial_pitch=frame.spatial_pitch)
        name = f"trace_{i:03d}.csv"
        _write_trace(run, name, trace)
        written.append(name)
    run.timing["infer"] = time.perf_counter() - t0
    run.write_report({"traces": written, "window": window,
                      "checkpoint_digest": ckpt.extra.get("config_digest")})


def cmd_lcf(run, args):
    from .baselines import lcf_trace
    from .evaluation import lcf_measurement

    written, failed = [], {}
    t0 = time.perf_counter()
    for i, path in enumerate(_frames_arg(args)):
        frame, _ = load_frame(path)
        trace = lcf_measurement(frame) if run.config["align"] else lcf_trace(frame)
        name = f"trace_{i:03d}.csv"
        _write_trace(run, name, trace)
        written.append(name)
        failed[name] = trace.meta.get("failed_columns", [])
    run.timing["lcf"] = time.perf_counter() - t0
    run.write_report({"traces": written, "failed_columns": failed})


def cmd_dpp(run, args):
    from .baselines import dpp_differential, lcf_trace
    from .evaluation import dpp_measurement

    if not (args.long and args.short):
        raise ConfigError("dpp needs --long and --short frame files")
    long_f, long_s = load_frame(args.long)
    short_f, short_s = load_frame(args.short)
    if long_f.normalized or short_f.normalized:
        raise ConfigError("DPP needs un-normalized frames")
    diff = dpp_differential(long_f, short_f)
    save_frame(run.out / "differential.bin", diff, long_s.truth, long_s.label, run.stamp())
    trace = dpp_measurement(long_f, short_f) if run.config["align"] else lcf_trace(diff)
    _write_trace(run, "trace.csv", trace)
    run.write_report({"pulse_pair_s": diff.meta.get("pulse_pair_s"),
                      "failed_columns": trace.meta.get("failed_columns", [])})


def cmd_hotspot_fixture(run, args):
    import numpy as np

    from .dataset import sample_stream
    from .evaluation import HotspotFixture, simulate_measurement
    from .physics import DEFAULT_CONSTANTS, PumpPulse, SweepGrid, simulate_bgs

    cfg = run.config
    fx = dict(cfg["fixture"])
    if "hotspots" in fx:
        fx["hotspots"] = tuple(tuple(h) for h in fx["hotspots"])
    try:
        fixture = HotspotFixture(**fx)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    sweep = SweepGrid(**cfg["sweep"])
    profile = fixture.profile()
    truth = fixture.truth()
    lo, hi = cfg["bfs_range"]
    label = (fixture.reference(cfg["target_sr"]).values - lo) / (hi - lo)
    files = []
    t0 = time.perf_counter()
    for wi, width in enumerate(cfg["pulse_widths_s"]):
        clean = simulate_bgs(profile, PumpPulse(width), sweep)
        for r in range(cfg["repeats"]):
            rng = sample_stream(run.seed, wi * 1000 + r)
            frame = simulate_measurement(profile, width, sweep, cfg["noise_variance"], cfg["n_avg"],
                                         rng, clean=clean)
            name = f"fixture_{width * 1e9:g}ns_r{r}.bin"
            save_frame(run.out / name, frame, truth.values, label,
                       dict(run.stamp(), fixture=fixture.to_dict(), repeat=r, bfs_range=[lo, hi]))
            files.append(name)
    run.timing["simulate"] = time.perf_counter() - t0
    _write_trace(run, "truth.csv", truth)
    _write_trace(run, "reference.csv", fixture.reference(cfg["target_sr"]))
    run.write_report({"files": files, "fixture": fixture.to_dict(),
                      "constants": {"spatial_pitch": DEFAULT_CONSTANTS.spatial_pitch}})


def cmd_eval(run, args):
    import numpy as np

    from .evaluation import MHZ, HotspotFixture, edge_transition, evaluate, hotspot_errors

    if not (args.pred and args.truth):
        raise ConfigError("eval needs --pred and --truth")
    preds = [_read_trace_csv(p) for p in args.pred]
    truth = _read_trace_csv(args.truth)
    for p in preds:
        if len(p) != len(truth):
            raise ValueError(f"trace length {len(p)} differs from truth length {len(truth)}")
    report = evaluate(preds[0], truth, args.method, args.pulse_width or 0.0, run.seed,
                      repeats=preds if len(preds) > 1 else None)
    fx = run.config["fixture"]
    if fx is not None:
        fx = dict(fx)
        if "hotspots" in fx:
            fx["hotspots"] = tuple(tuple(h) for h in fx["hotspots"])
        fixture = HotspotFixture(**fx)
        errs = hotspot_errors(preds[0], fixture, search_margin=run.config["search_margin_m"])
        report.hotspot_errors_mhz = [e["error_hz"] / MHZ for e in errs]
        lengths = []
        for start, length in fixture.hotspots:
            try:
                lengths.append(edge_transition(preds[0], start, run.config["edge_half_window_m"]))
            except ValueError:
                lengths.append(None)
        report.transition_lengths_m = lengths
    diff = preds[0].values - truth.values
    rows = [[z, e / MHZ] for z, e in zip(truth.positions.tolist(), diff.tolist())]
    if report.per_position_uncertainty_mhz is not None:
        header = ["position_m", "error_mhz", "uncertainty_mhz"]
        rows = [r + [u] for r, u in zip(rows, report.per_position_uncertainty_mhz)]
    else:
        header = ["position_m", "error_mhz"]
    run.write_csv("per_position.csv", header, rows)
    scalars = report.scalars()
    scalars.pop("timing_s")
    scalars["max_abs_error_mhz"] = float(np.max(np.abs(diff))) / MHZ
    run.write_report({"metrics": scalars})


def cmd_bench(run, args):
    import numpy as np

    from .baselines import lcf_trace
    from .dataset import DatasetConfig, ProfileRanges, make_sample
    from .physics import BGSFrame, SweepGrid
    from .srnet import ModelConfig, build_model, load_checkpoint

    cfg = run.config
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint).model
        window = load_checkpoint(args.checkpoint).extra.get("window") or SCALES[cfg["scale"]]["window"]
    else:
        model = build_model(ModelConfig.for_scale(cfg["scale"]), np.random.default_rng(run.seed))
        window = SCALES[cfg["scale"]]["window"]
    dcfg = DatasetConfig(ranges=ProfileRanges(total_length=window * 0.1))
    samples = [make_sample(dcfg, run.seed, i) for i in range(cfg["n_frames"])]
    x = np.stack([s.input for s in samples])[:, None]
    model.eval()
    t0 = time.perf_counter()
    model.predict(x, cfg["batch_size"])
    cnn = time.perf_counter() - t0
    sweep = SweepGrid(**samples[0].meta["sweep"])
    t0 = time.perf_counter()
    for s in samples:
        lcf_trace(BGSFrame(s.input.astype(np.float64), sweep, 0.1, normalized=True))
    lcf = time.perf_counter() - t0
    n_spectra = cfg["n_frames"] * window
    run.timing.update(cnn_s=cnn, lcf_s=lcf, cnn_spectra_per_s=n_spectra / cnn,
                      lcf_spectra_per_s=n_spectra / lcf, lcf_over_cnn=lcf / cnn)
    run.write_report({"n_frames": cfg["n_frames"], "window": window, "n_spectra": n_spectra})


def cmd_grad_check(run, args):
    from .autodiff import layer_suite

    cfg = run.config
    reports = layer_suite(cfg["n_seeds"], cfg["tolerance"], cfg["layers"])
    worst = {}
    for r in reports:
        worst[r.name] = max(worst.get(r.name, 0.0), r.max_rel_error)
    run.write_csv("grad_check.csv", ["layer", "seed", "max_rel_error", "passed"],
                  [[r.name, i % cfg["n_seeds"], r.max_rel_error, r.passed] for i, r in enumerate(reports)])
    failed = sorted({r.name for r in reports if not r.passed})
    run.write_report({"worst_rel_error": worst, "failed_layers": failed})
    if failed:
        raise FloatingPointError(f"gradient check failed for {failed}")


COMMANDS = {
    "simulate": cmd_simulate,
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "infer": cmd_infer,
    "lcf": cmd_lcf,
    "dpp": cmd_dpp,
    "hotspot-fixture": cmd_hotspot_fixture,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "grad-check": cmd_grad_check,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file overriding the command defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--scale", choices=sorted(SCALES), default="desk")
    common.add_argument("--deterministic", action="store_true",
                        help="pin BLAS to one thread so reruns are bit-identical")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="botdasr", description=__doc__.split("\n\n")[0].replace("\n", " "))
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HELP.get(name))
        if name in ("train",):
            p.add_argument("--data", help="dataset directory")
            p.add_argument("--val", help="validation dataset directory")
        if name in ("infer", "bench"):
            p.add_argument("--checkpoint")
        if name in ("infer", "lcf"):
            p.add_argument("--frame", nargs="+", help="frame files")
        if name == "dpp":
            p.add_argument("--long", help="long-pulse frame file")
            p.add_argument("--short", help="short-pulse frame file")
        if name == "eval":
            p.add_argument("--pred", nargs="+", help="predicted trace CSV(s); several = repeats")
            p.add_argument("--truth", help="reference trace CSV")
            p.add_argument("--method", default="unknown")
            p.add_argument("--pulse-width", type=float, default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.deterministic:
        # only effective before numpy loads, i.e. when run as a fresh process
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = "1"
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .autodiff import NumericalError
    from .baselines import FitError, GridMismatchError, LcfError
    from .dataset import DatasetError
    from .physics import PhysicsError
    from .srnet import CheckpointError

    try:
        config = resolve_config(args.command, args.config, args.scale)
        config["deterministic"] = bool(args.deterministic)
        run = Run(args.command, config, args.seed, args.out)
        COMMANDS[args.command](run, args)
    except (ConfigError, PhysicsError, GridMismatchError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, NumericalError, LcfError, FitError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, CheckpointError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
