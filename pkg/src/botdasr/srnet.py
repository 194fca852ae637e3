"""Residual CNN mapping a 71-frequency BGS window to a normalized BFS row.

Frequency is downsampled by stride-(2, 1) layers while the fiber-length axis
keeps its width everywhere, so a W-wide input gives a W-wide BFS output.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .dataset import denormalize_bfs
from .physics import BfsTrace

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SRNC"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


class DivergenceError(FloatingPointError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class ModelConfig:
    input_freq: int = 71
    in_channels: int = 1
    stem_channels: int = 64
    stem_kernel: int = 7
    pool_kernel: int = 3
    stage_blocks: tuple = (3, 4, 6, 3)
    stage_channels: tuple = (64, 128, 256, 512)
    head_kernel_width: int = 1
    scale: str = "full"

    def __post_init__(self):
        if len(self.stage_blocks) != len(self.stage_channels):
            raise ValueError("stage_blocks and stage_channels differ in length")
        if min(self.stage_blocks) < 1 or min(self.stage_channels) < 1:
            raise ValueError("block and channel counts must be >= 1")
        if self.head_kernel_width < 1 or self.head_kernel_width % 2 == 0:
            raise ValueError("head kernel width must be odd and >= 1")
        if self.freq_extents()[-1] < 1:
            raise ValueError("configuration collapses the frequency axis")

    @classmethod
    def desk(cls, **overrides):
        """CPU-tractable variant: one block per stage, quarter channel counts."""
        base = dict(stem_channels=16, stage_blocks=(1, 1, 1, 1),
                    stage_channels=(16, 32, 64, 128), head_kernel_width=17, scale="desk")
        base.update(overrides)
        return cls(**base)

    @classmethod
    def for_scale(cls, scale: str):
        if scale == "full":
            return cls()
        if scale == "desk":
            return cls.desk()
        raise ValueError(f"unknown scale {scale!r}")

    def freq_extents(self):
        """Frequency extent after the stem, the pool and each stage."""
        f = (self.input_freq + 2 * (self.stem_kernel // 2) - self.stem_kernel) // 2 + 1
        out = [f]
        f = (f + 2 * (self.pool_kernel // 2) - self.pool_kernel) // 2 + 1
        out.append(f)
        for s in range(len(self.stage_blocks)):
            if s > 0:
                f = (f + 2 - 3) // 2 + 1
            out.append(f)
        return out

    def to_dict(self):
        d = asdict(self)
        d["stage_blocks"] = list(self.stage_blocks)
        d["stage_channels"] = list(self.stage_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["stage_blocks"] = tuple(d["stage_blocks"])
        d["stage_channels"] = tuple(d["stage_channels"])
        return cls(**d)


def receptive_field_width(config: ModelConfig) -> int:
    """Receptive field (samples) along the fiber axis; every width stride is 1."""
    rf = 1 + (config.stem_kernel - 1) + (config.pool_kernel - 1)
    rf += sum(config.stage_blocks) * 2 * (3 - 1)
    return rf + config.head_kernel_width - 1


class SRNet:
    """Parameters, BN running statistics and the forward pass."""

    def __init__(self, config: ModelConfig, params: dict, buffers: dict):
        self.config = config
        self.params = params
        self.buffers = buffers
        self.training = True
        self.layers = _layer_plan(config)

    def parameters(self):
        return [self.params[k] for k in sorted(self.params)]

    def parameter_names(self):
        return sorted(self.params)

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def _conv(self, name, x, stride, padding, bias=False):
        b = self.params.get(name + ".bias") if bias else None
        return ad.conv2d(x, self.params[name + ".weight"], b, stride=stride, padding=padding)

    def _bn(self, name, x):
        mean, var = self.buffers[name + ".running_mean"], self.buffers[name + ".running_var"]
        return ad.batchnorm2d(x, self.params[name + ".weight"], self.params[name + ".bias"],
                              mean, var, self.training)

    def forward(self, x, trace=None) -> Tensor:
        """``x``: (B, 1, freq, W) array; returns (B, W).

        Internally the activations run channels-last, (B, freq, W, C).

        ``trace`` (a list) receives ``(layer, shape)`` after each stage when given.
        """
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        if data.ndim != 4 or data.shape[1:3] != (self.config.in_channels, self.config.input_freq):
            raise ad.ShapeError(
                f"expected (B, {self.config.in_channels}, {self.config.input_freq}, W), got {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise ad.NumericalError("non-finite network input")
        dtype = self.params["stem.conv.weight"].dtype
        x = Tensor(np.ascontiguousarray(data.transpose(0, 2, 3, 1), dtype=dtype))
        k = self.config.stem_kernel // 2
        h = self._conv("stem.conv", x, (2, 1), (k, k))
        h = ad.relu(self._bn("stem.bn", h))
        p = self.config.pool_kernel // 2
        h = ad.maxpool2d(h, self.config.pool_kernel, (2, 1), (p, p))
        if trace is not None:
            trace.append(("stem", h.shape))
        for name, stride, project in self.layers:
            shortcut = h
            out = ad.relu(self._bn(name + ".bn1", self._conv(name + ".conv1", h, stride, (1, 1))))
            out = self._bn(name + ".bn2", self._conv(name + ".conv2", out, (1, 1), (1, 1)))
            if project:
                shortcut = self._bn(name + ".proj_bn", self._conv(name + ".proj", h, stride, (0, 0)))
            h = ad.relu(ad.residual_add(out, shortcut))
            if trace is not None:
                trace.append((name, h.shape))
        hw = self.config.head_kernel_width
        h = self._conv("head", h, (1, 1), (0, hw // 2), bias=True)
        if trace is not None:
            trace.append(("head", h.shape))
        return ad.flatten_width(h)

    __call__ = forward

    def predict(self, x, batch_size=32) -> np.ndarray:
        """Eval-mode forward without graph recording; returns a (B, W) array."""
        x = np.asarray(x)
        outs = []
        was = self.training
        self.eval()
        try:
            with ad.no_grad():
                for i in range(0, x.shape[0], batch_size):
                    outs.append(self.forward(x[i : i + batch_size]).data)
        finally:
            self.training = was
        return np.concatenate(outs, axis=0)


def _layer_plan(config: ModelConfig):
    plan = []
    c_in = config.stem_channels
    for s, (n_blocks, c_out) in enumerate(zip(config.stage_blocks, config.stage_channels)):
        for b in range(n_blocks):
            stride = (2, 1) if (s > 0 and b == 0) else (1, 1)
            project = stride != (1, 1) or c_in != c_out
            plan.append((f"stage{s + 1}.block{b + 1}", stride, project))
            c_in = c_out
    return plan


def build_model(config: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> SRNet:
    """Kaiming-initialized network; BN scales start at 1 and shifts at 0."""
    params, buffers = {}, {}

    def conv(name, c_out, c_in, kh, kw, bias=False):
        fan_in = c_in * kh * kw
        params[name + ".weight"] = Tensor(
            ad.kaiming_init((kh, kw, c_in, c_out), fan_in, rng, dtype), requires_grad=True,
            name=name + ".weight")
        if bias:
            params[name + ".bias"] = Tensor(np.zeros(c_out, dtype), requires_grad=True,
                                            name=name + ".bias")

    def bn(name, c):
        params[name + ".weight"] = Tensor(np.ones(c, dtype), requires_grad=True, name=name + ".weight")
        params[name + ".bias"] = Tensor(np.zeros(c, dtype), requires_grad=True, name=name + ".bias")
        buffers[name + ".running_mean"] = np.zeros(c, dtype)
        buffers[name + ".running_var"] = np.ones(c, dtype)

    k = config.stem_kernel
    conv("stem.conv", config.stem_channels, config.in_channels, k, k)
    bn("stem.bn", config.stem_channels)
    c_in = config.stem_channels
    plan = iter(_layer_plan(config))
    for n_blocks, c_out in zip(config.stage_blocks, config.stage_channels):
        for _ in range(n_blocks):
            name, _stride, project = next(plan)
            conv(name + ".conv1", c_out, c_in, 3, 3)
            bn(name + ".bn1", c_out)
            conv(name + ".conv2", c_out, c_out, 3, 3)
            bn(name + ".bn2", c_out)
            if project:
                conv(name + ".proj", c_out, c_in, 1, 1)
                bn(name + ".proj_bn", c_out)
            c_in = c_out
    f_last = config.freq_extents()[-1]
    conv("head", 1, c_in, f_last, config.head_kernel_width, bias=True)
    return SRNet(config, params, buffers)


@dataclass
class TrainHyper:
    lr: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 100
    loss_margin: int = 20          # columns excluded at each edge (540 -> 500)
    patience: int = 10
    seed: int = 0
    time_budget_s: float | None = None   # CPU seconds
    checked: bool = True
    lr_schedule: str = "constant"  # or "cosine", annealed over max_epochs
    lr_floor: float = 0.01         # final fraction of lr under "cosine"

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``."""
        if self.lr_schedule == "constant" or self.max_epochs <= 1:
            return self.lr
        frac = (epoch - 1) / (self.max_epochs - 1)
        return float(self.lr * (self.lr_floor + (1 - self.lr_floor) * 0.5 * (1 + np.cos(np.pi * frac))))

    def to_dict(self):
        return asdict(self)


@dataclass
class Checkpoint:
    model: SRNet
    bfs_range: tuple
    history: list = field(default_factory=list)
    optimizer: AdamState | None = None
    hyper: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def loss_mask(width: int, margin: int) -> np.ndarray:
    return ad.width_mask(width, width - 2 * margin)


def evaluate_loss(model: SRNet, x, y, margin: int, batch_size=32) -> float:
    pred = model.predict(x, batch_size)
    mask = loss_mask(y.shape[1], margin)
    return float(np.mean((pred[:, mask] - y[:, mask]) ** 2))


def _snapshot(model: SRNet):
    return ({k: p.data.copy() for k, p in model.params.items()},
            {k: b.copy() for k, b in model.buffers.items()})


def _restore(model: SRNet, snap):
    params, buffers = snap
    for k, v in params.items():
        model.params[k].data[...] = v
    for k, v in buffers.items():
        model.buffers[k][...] = v


def train(model: SRNet, train_set, val_set, hyper: TrainHyper, bfs_range,
          on_epoch=None) -> Checkpoint:
    """Adam on the centre-masked MSE; keeps the best-validation weights.

    ``train_set``/``val_set`` are ``(x, y)`` arrays shaped (n, 1, freq, W) and
    (n, W).  Sample order comes from a generator seeded by ``hyper.seed``.
    """
    x_tr, y_tr = train_set
    x_va, y_va = val_set
    if x_tr.shape[2] != model.config.input_freq:
        raise ad.ShapeError("training inputs do not match the model frequency count")
    dtype = model.params["stem.conv.weight"].dtype
    x_tr, y_tr = x_tr.astype(dtype, copy=False), y_tr.astype(dtype, copy=False)
    mask = loss_mask(y_tr.shape[1], hyper.loss_margin)
    rng = np.random.default_rng(hyper.seed)
    state = AdamState(lr=hyper.lr)
    names = model.parameter_names()
    params = [model.params[n] for n in names]
    history = []
    best = (np.inf, -1, _snapshot(model))
    stale = 0
    t0 = time.perf_counter()
    c0 = time.process_time()
    ad.set_checked(hyper.checked)
    try:
        for epoch in range(1, hyper.max_epochs + 1):
            model.train()
            state.lr = hyper.lr_at(epoch)
            order = rng.permutation(x_tr.shape[0])
            total, count = 0.0, 0
            for i in range(0, len(order), hyper.batch_size):
                idx = np.sort(order[i : i + hyper.batch_size])
                if idx.size < 2:
                    continue  # BN needs more than one sample
                model.zero_grad()
                loss = ad.mse_loss(model(x_tr[idx]), y_tr[idx], mask)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise DivergenceError(f"loss became {value} at epoch {epoch}, batch {i}")
                loss.backward()
                ad.adam_step([p.data for p in params], [p.grad for p in params], state)
                total += value * idx.size
                count += idx.size
            train_mse = total / max(count, 1)
            val_mse = evaluate_loss(model, x_va, y_va, hyper.loss_margin)
            elapsed = time.perf_counter() - t0
            cpu = time.process_time() - c0
            history.append({"epoch": epoch, "lr": state.lr, "train_mse": train_mse, "val_mse": val_mse,
                            "elapsed_s": elapsed, "cpu_s": cpu})
            log.info("epoch %d train %.3e val %.3e (%.0f s)", epoch, train_mse, val_mse, elapsed)
            if on_epoch is not None:
                on_epoch(history[-1])
            if val_mse < best[0]:
                best = (val_mse, epoch, _snapshot(model))
                stale = 0
            else:
                stale += 1
            if stale >= hyper.patience:
                break
            # the CPU budget must also hold for the epoch that would come next
            if hyper.time_budget_s is not None and cpu * (epoch + 1) / epoch > hyper.time_budget_s:
                break
    except FloatingPointError as exc:
        raise DivergenceError(f"training diverged: {exc}") from exc
    finally:
        ad.set_checked(False)
    _restore(model, best[2])
    model.eval()
    return Checkpoint(model=model, bfs_range=tuple(bfs_range), history=history, optimizer=state,
                      hyper=hyper.to_dict(), seeds={"train": hyper.seed},
                      extra={"best_epoch": best[1], "best_val_mse": best[0]})


TIMING_KEYS = ("elapsed_s", "cpu_s")


def strip_timing(history):
    """History rows without clock readings, for byte-reproducible artifacts."""
    return [{k: v for k, v in row.items() if k not in TIMING_KEYS} for row in history]


def history_csv(history) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "lr", "train_mse", "val_mse"])
    for row in history:
        writer.writerow([row["epoch"], repr(row.get("lr", "")), repr(row["train_mse"]),
                         repr(row["val_mse"])])
    return buf.getvalue()


def infer_long(model: SRNet, frame_gain: np.ndarray, bfs_range, window: int | None = None,
               margin: int = 20, stride: int | None = None, spatial_pitch: float = 0.1,
               batch_size: int = 16) -> BfsTrace:
    """Tile a (freq, W) frame into windows and stitch the centre outputs.

    Each window contributes only its central ``window - 2 margin`` columns;
    the frame is edge-replicated by ``margin`` columns on both sides so the
    fiber ends are covered.  Output is BFS in Hz of length W.
    """
    if bfs_range is None:
        raise CheckpointError("BFS normalization range is required for inference")
    gain = np.asarray(frame_gain)
    n_freq, width = gain.shape
    window = window or 540
    center = window - 2 * margin
    stride = stride or center
    if not 0 < stride <= center:
        raise ValueError("stride must be in (0, window - 2 margin]")
    if width < center:
        raise ValueError(f"frame width {width} shorter than the window centre {center}")
    padded = np.pad(gain, ((0, 0), (margin, margin)), mode="edge")
    starts = list(range(0, width - center + 1, stride))
    if starts[-1] != width - center:
        starts.append(width - center)
    batch = np.stack([padded[:, s : s + window] for s in starts])[:, None]
    dtype = model.params["stem.conv.weight"].dtype
    pred = model.predict(batch.astype(dtype), batch_size)
    out = np.zeros(width)
    hits = np.zeros(width)
    for s, row in zip(starts, pred):
        out[s : s + center] += row[margin : margin + center]
        hits[s : s + center] += 1
    norm = out / hits
    return BfsTrace(denormalize_bfs(norm, bfs_range), spatial_pitch,
                    {"method": "cnn", "window": window, "stride": stride, "margin": margin})


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Header, JSON config block, then named little-endian float32 tensors."""
    model = ckpt.model
    tensors = {f"param:{k}": v.data for k, v in model.params.items()}
    tensors.update({f"buffer:{k}": v for k, v in model.buffers.items()})
    if ckpt.optimizer is not None and ckpt.optimizer.m:
        for i, (m, v) in enumerate(zip(ckpt.optimizer.m, ckpt.optimizer.v)):
            tensors[f"adam_m:{i:04d}"] = m
            tensors[f"adam_v:{i:04d}"] = v
    header = {
        "config": model.config.to_dict(),
        "bfs_range": list(ckpt.bfs_range),
        "history": ckpt.history,
        "hyper": ckpt.hyper,
        "seeds": ckpt.seeds,
        "extra": ckpt.extra,
        "bn": {"momentum": 0.1, "eps": 1e-5},
        "optimizer": None if ckpt.optimizer is None else {
            "lr": ckpt.optimizer.lr, "beta1": ckpt.optimizer.beta1,
            "beta2": ckpt.optimizer.beta2, "eps": ckpt.optimizer.eps,
            "step": ckpt.optimizer.step},
        "tensors": [[k, list(tensors[k].shape)] for k in sorted(tensors)],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for k in sorted(tensors):
            fh.write(np.ascontiguousarray(tensors[k], dtype="<f4").tobytes())


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> Checkpoint:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<HI", blob, 4)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 10
    try:
        header = json.loads(blob[off : off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    off += hlen
    config = ModelConfig.from_dict(header["config"])
    if expect_config is not None and config != expect_config:
        raise CheckpointError(f"{path}: checkpoint config differs from the expected one")
    arrays = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        if off + 4 * n > len(blob):
            raise CheckpointError(f"{path}: truncated tensor data at {name}")
        arrays[name] = np.frombuffer(blob, "<f4", n, off).reshape(shape).astype(np.float32)
        off += 4 * n
    if off != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after tensor data")
    model = build_model(config, np.random.default_rng(0))
    for k, p in model.params.items():
        key = f"param:{k}"
        if key not in arrays or arrays[key].shape != p.shape:
            raise CheckpointError(f"{path}: missing or misshapen tensor {k}")
        p.data = arrays[key].copy()
    for k in model.buffers:
        model.buffers[k] = arrays[f"buffer:{k}"].copy()
    opt = None
    if header.get("optimizer"):
        o = header["optimizer"]
        opt = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], step=o["step"])
        idx = sorted({k.split(":")[1] for k in arrays if k.startswith("adam_m:")})
        opt.m = [arrays[f"adam_m:{i}"].copy() for i in idx]
        opt.v = [arrays[f"adam_v:{i}"].copy() for i in idx]
    model.eval()
    return Checkpoint(model=model, bfs_range=tuple(header["bfs_range"]), history=header["history"],
                      optimizer=opt, hyper=header.get("hyper", {}), seeds=header.get("seeds", {}),
                      extra=header.get("extra", {}))
