"""A small reverse-mode autodiff engine over numpy arrays.

Only the layers the SR network needs are provided: 2-D convolution, batch
normalization, ReLU, max pooling, residual addition and a masked MSE loss.
Activations are channels-last, ``(batch, freq, width, channels)``, and
convolution weights are ``(kh, kw, c_in, c_out)``; this keeps the im2col
copies and the matmul outputs contiguous.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NumericalError(FloatingPointError):
    """A non-finite value appeared while checked mode was on."""


class ShapeError(ValueError):
    pass


_state = {"grad": True, "checked": False}


@contextlib.contextmanager
def no_grad():
    """Run ops without recording the graph (inference)."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def set_checked(flag: bool) -> None:
    """Turn the NaN/Inf check after every op on or off."""
    _state["checked"] = bool(flag)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Propagate gradients from this tensor to every tensor that requires them."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # intermediate gradients are not needed once propagated
                node.grad = None


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _needs_grad(*tensors):
    return _state["grad"] and any(t is not None and t.requires_grad for t in tensors)


def _make(data, parents, backward):
    if _state["checked"] and not np.all(np.isfinite(data)):
        raise NumericalError("non-finite values produced in forward pass")
    if _needs_grad(*parents):
        return Tensor(data, requires_grad=True, _parents=tuple(p for p in parents if p is not None),
                      _backward=backward)
    return Tensor(data)


def _pair(v):
    return (v, v) if np.isscalar(v) else tuple(v)


def conv_output_size(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def _offsets(kh, kw):
    return [(i, j) for i in range(kh) for j in range(kw)]


def _windows(xp, ho, wo, kh, kw, sh, sw):
    """Read-only (B, ho, wo, kh, kw, C) view of the sliding windows of ``xp``."""
    b_, _, _, c = xp.shape
    sb, s_h, s_w, s_c = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (b_, ho, wo, kh, kw, c), (sb, sh * s_h, sw * s_w, s_h, s_w, s_c), writeable=False)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of ``x`` (B, H, W, C) with ``weight`` (kh, kw, C, O)."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ShapeError("strides must be >= 1")
    b_, h, w, c = x.shape
    kh, kw, c_w, o = weight.shape
    if c != c_w:
        raise ShapeError(f"input has {c} channels, weight expects {c_w}")
    ho, wo = conv_output_size(h, kh, sh, ph), conv_output_size(w, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise ShapeError("kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x.data
    offsets = _offsets(kh, kw)
    # columns ordered (ki, kj, c): fixed kernel-major reduction order
    cols = _windows(xp, ho, wo, kh, kw, sh, sw).reshape(b_ * ho * wo, kh * kw * c)
    wmat = weight.data.reshape(kh * kw * c, o)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(b_, ho, wo, o)

    def backward(g):
        gmat = g.reshape(-1, o)
        if weight.requires_grad:
            weight._accumulate((cols.T @ gmat).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(np.ones(gmat.shape[0], gmat.dtype) @ gmat)
        if not x.requires_grad:
            return
        top, left = kh - 1 - ph, kw - 1 - pw
        if sh == sw == 1 and top >= 0 and left >= 0:
            # unit stride: the input gradient is the padded output gradient
            # correlated with the spatially flipped, io-swapped kernel
            gp = np.pad(g, ((0, 0), (top, top), (left, left), (0, 0))) if (top or left) else g
            gcols = _windows(gp, h, w, kh, kw, 1, 1).reshape(b_ * h * w, kh * kw * o)
            flipped = np.ascontiguousarray(weight.data[::-1, ::-1].transpose(0, 1, 3, 2))
            x._accumulate((gcols @ flipped.reshape(kh * kw * o, c)).reshape(x.shape))
        else:
            dcols = (gmat @ np.ascontiguousarray(wmat.T)).reshape(b_, ho, wo, kh * kw, c)
            dxp = np.zeros(xp.shape, dtype=x.data.dtype)
            for n, (i, j) in enumerate(offsets):
                dxp[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw, :] += dcols[:, :, :, n, :]
            x._accumulate(dxp[:, ph : ph + h, pw : pw + w, :])

    return _make(out, (x, weight, bias), backward)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum=0.1, eps=1e-5) -> Tensor:
    """Per-channel batch normalization of (B, H, W, C) input.  In training mode
    the running statistics are updated in place (unbiased variance)."""
    b_, h, w, c = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("gamma/beta must have one entry per channel")
    n = b_ * h * w
    if n == 0:
        raise ShapeError("zero-size batch")
    # per-channel sums as a (n,) @ (n, c) product: BLAS is far faster than
    # numpy's multi-axis reductions here
    x2 = x.data.reshape(n, c)
    ones = np.ones(n, dtype=x.dtype)
    if training:
        mean = (ones @ x2) / n
        xhat = x2 - mean
        var = (ones @ np.square(xhat)) / n
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
        xhat = x2 - mean
    invstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat *= invstd
    out = xhat * gamma.data
    out += beta.data
    out = out.reshape(x.shape)

    def backward(g):
        g2 = g.reshape(n, c)
        gsum = ones @ g2
        gxhat = ones @ (g2 * xhat)
        if gamma.requires_grad:
            gamma._accumulate(gxhat)
        if beta.requires_grad:
            beta._accumulate(gsum)
        if x.requires_grad:
            scale = gamma.data * invstd
            if training:
                gx = (g2 - gsum / n - xhat * (gxhat / n)) * scale
            else:
                gx = g2 * scale
            x._accumulate(gx.reshape(x.shape))

    return _make(out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.maximum(x.data, 0, dtype=x.dtype)

    def backward(g):
        x._accumulate(g * mask)

    return _make(out, (x,), backward)


def maxpool2d(x: Tensor, kernel=3, stride=1, padding=0) -> Tensor:
    """Window maximum over (B, H, W, C); the gradient goes to the first maximal entry."""
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    b_, h, w, c = x.shape
    ho, wo = conv_output_size(h, kh, sh, ph), conv_output_size(w, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise ShapeError("pool window larger than padded input")
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)), constant_values=-np.inf)
    offsets = _offsets(kh, kw)

    def window(i, j):
        return (slice(None), slice(i, i + sh * (ho - 1) + 1, sh),
                slice(j, j + sw * (wo - 1) + 1, sw), slice(None))

    out = xp[window(*offsets[0])].copy()
    for i, j in offsets[1:]:
        np.maximum(out, xp[window(i, j)], out=out)

    def backward(g):
        # each output's gradient goes to the first window entry equal to its maximum
        dxp = np.zeros(xp.shape, dtype=x.data.dtype)
        pending = np.ones(out.shape, dtype=bool)
        for i, j in offsets:
            hit = xp[window(i, j)] == out
            hit &= pending
            pending &= ~hit
            dxp[window(i, j)] += g * hit
        x._accumulate(dxp[:, ph : ph + h, pw : pw + w, :])

    return _make(out, (x,), backward)


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"residual shapes differ: {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, (a, b), backward)


def flatten_width(x: Tensor) -> Tensor:
    """(B, 1, W, 1) -> (B, W)."""
    b_, h, w, c = x.shape
    if c != 1 or h != 1:
        raise ShapeError(f"expected (B, 1, W, 1), got {x.shape}")

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _make(x.data.reshape(b_, w), (x,), backward)


def width_mask(width: int, center: int) -> np.ndarray:
    """Boolean mask selecting the central ``center`` columns of ``width``."""
    if not 0 < center <= width:
        raise ShapeError(f"mask of {center} columns does not fit width {width}")
    lo = (width - center) // 2
    mask = np.zeros(width, dtype=bool)
    mask[lo : lo + center] = True
    return mask


def mse_loss(pred: Tensor, target, mask=None) -> Tensor:
    """Mean squared error over the masked width columns of (B, W) arrays."""
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    width = pred.shape[-1]
    mask = np.ones(width, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (width,):
        raise ShapeError("mask length must equal width")
    count = int(mask.sum()) * int(np.prod(pred.shape[:-1]))
    if count == 0:
        raise ShapeError("empty loss mask")
    diff = (pred.data - target) * mask
    value = np.asarray((diff**2).sum() / count, dtype=pred.dtype)

    def backward(g):
        pred._accumulate(g * 2.0 * diff / count)

    return _make(value, (pred,), backward)


def kaiming_init(shape, fan_in: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Zero-mean normal draws with variance ``2 / fan_in``."""
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState) -> None:
    """One bias-corrected Adam update applied in place to ``params``."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("optimizer state does not match parameter list")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    per_input: dict
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def grad_check(fn, inputs, tolerance=1e-4, h=1e-5, seed=0, name="op") -> GradCheckReport:
    """Compare tape gradients of ``fn`` with central differences.

    ``inputs`` is a list of float64 arrays; ``fn`` maps Tensors to a Tensor.
    Non-scalar outputs are reduced with a fixed random cotangent.  The error
    per input is ``|g_tape - g_fd| / max(|g_tape|, |g_fd|)`` in the 2-norm.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    if any(a.dtype != np.float64 for a in arrays):
        raise TypeError("grad_check runs in 64-bit")
    # a stream distinct from default_rng(seed), which callers often use for the inputs
    rng = np.random.default_rng((seed, 1))
    probe = fn(*[Tensor(a) for a in arrays])
    cotangent = rng.standard_normal(probe.shape) if probe.data.size > 1 else np.ones(probe.shape)

    def scalar(*arrs):
        with no_grad():
            out = fn(*[Tensor(a) for a in arrs])
        return float(np.sum(out.data * cotangent))

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    out.backward(cotangent.astype(np.float64))
    per_input = {}
    for idx, (t, a) in enumerate(zip(tensors, arrays)):
        tape = np.zeros_like(a) if t.grad is None else t.grad
        numeric = np.zeros_like(a)
        for pos in np.ndindex(a.shape):
            step = h * max(1.0, abs(a[pos]))
            orig = a[pos]
            a[pos] = orig + step
            up = scalar(*arrays)
            a[pos] = orig - step
            down = scalar(*arrays)
            a[pos] = orig
            numeric[pos] = (up - down) / (2 * step)
        scale = max(np.linalg.norm(tape), np.linalg.norm(numeric), 1e-12)
        per_input[idx] = float(np.linalg.norm(tape - numeric) / scale)
    return GradCheckReport(name, max(per_input.values()), per_input, tolerance)


def _case_conv(rng):
    x = rng.standard_normal((2, 7, 5, 3))
    w = rng.standard_normal((3, 3, 3, 4)) * 0.3
    b = rng.standard_normal(4)
    return (lambda x, w, b: conv2d(x, w, b, stride=(2, 1), padding=1)), [x, w, b]


def _case_conv_wide(rng):
    x = rng.standard_normal((2, 3, 9, 2))
    w = rng.standard_normal((3, 5, 2, 1)) * 0.3
    return (lambda x, w: conv2d(x, w, None, stride=1, padding=(0, 2))), [x, w]


def _case_batchnorm(rng):
    x = rng.standard_normal((3, 4, 5, 3)) * 2 + 1
    g = rng.standard_normal(3)
    b = rng.standard_normal(3)
    stats = (np.zeros(3), np.ones(3))
    return (lambda x, g, b: batchnorm2d(x, g, b, stats[0].copy(), stats[1].copy(), True)), [x, g, b]


def _case_batchnorm_eval(rng):
    x = rng.standard_normal((2, 3, 4, 3))
    g = rng.standard_normal(3)
    b = rng.standard_normal(3)
    mean, var = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)
    return (lambda x, g, b: batchnorm2d(x, g, b, mean, var, False)), [x, g, b]


def _case_relu(rng):
    x = rng.standard_normal((2, 3, 4, 2))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    return relu, [x]


def _case_maxpool(rng):
    # distinct values, so the window maximum is unique and stable under the FD step
    x = rng.permutation(2 * 7 * 6 * 2).reshape(2, 7, 6, 2) * 0.01 + rng.uniform(0, 1e-3)
    return (lambda x: maxpool2d(x, 3, (2, 1), 1)), [x]


def _case_residual(rng):
    a = rng.standard_normal((2, 3, 4, 2))
    b = rng.standard_normal((2, 3, 4, 2))
    return residual_add, [a, b]


def _case_flatten(rng):
    return flatten_width, [rng.standard_normal((3, 1, 6, 1))]


def _case_mse(rng):
    pred = rng.standard_normal((3, 8))
    target = rng.standard_normal((3, 8))
    mask = width_mask(8, 4)
    return (lambda p: mse_loss(p, target, mask)), [pred]


LAYER_CASES = {
    "conv2d": _case_conv,
    "conv2d_wide": _case_conv_wide,
    "batchnorm2d_train": _case_batchnorm,
    "batchnorm2d_eval": _case_batchnorm_eval,
    "relu": _case_relu,
    "maxpool2d": _case_maxpool,
    "residual_add": _case_residual,
    "flatten_width": _case_flatten,
    "mse_loss": _case_mse,
}


def layer_suite(n_seeds=20, tolerance=1e-4, layers=None):
    """Finite-difference check of every layer over ``n_seeds`` random draws."""
    reports = []
    for name in layers or LAYER_CASES:
        for seed in range(n_seeds):
            rng = np.random.default_rng(seed)
            fn, inputs = LAYER_CASES[name](rng)
            reports.append(grad_check(fn, inputs, tolerance=tolerance, seed=seed, name=name))
    return reports
