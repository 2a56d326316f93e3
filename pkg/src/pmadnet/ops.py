"""Differentiable operations on Tensors.

Each op validates shapes eagerly, computes the forward value with numpy (or
one of the compiled kernels), and registers a closure producing one gradient
array per parent.  No implicit broadcasting: elementwise ops demand equal
shapes, scalars go through *_scalar variants, and the only broadcasts are the
explicit gate ops used by attention blocks.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from . import kernels
from .errors import NonFiniteValue, ShapeMismatch, WindowTooLarge
from .tensor import Tensor

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# -- elementwise arithmetic -------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeMismatch(f"add: shapes {a.data.shape} and {b.data.shape} differ")

    def backprop(gy):
        ga = gy if a.data.shape == gy.shape else np.sum(gy).reshape(a.data.shape)
        gb = gy if b.data.shape == gy.shape else np.sum(gy).reshape(b.data.shape)
        return ga, gb

    return Tensor.result(a.data + b.data, (a, b), backprop, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeMismatch(f"sub: shapes {a.data.shape} and {b.data.shape} differ")

    def backprop(gy):
        ga = gy if a.data.shape == gy.shape else np.sum(gy).reshape(a.data.shape)
        gb = -gy if b.data.shape == gy.shape else -np.sum(gy).reshape(b.data.shape)
        return ga, gb

    return Tensor.result(a.data - b.data, (a, b), backprop, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeMismatch(f"mul: shapes {a.data.shape} and {b.data.shape} differ")

    def backprop(gy):
        ga = gy * b.data
        gb = gy * a.data
        if ga.shape != a.data.shape:
            ga = np.sum(ga).reshape(a.data.shape)
        if gb.shape != b.data.shape:
            gb = np.sum(gb).reshape(b.data.shape)
        return ga, gb

    return Tensor.result(a.data * b.data, (a, b), backprop, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeMismatch(f"div: shapes {a.data.shape} and {b.data.shape} differ")
    out = a.data / b.data

    def backprop(gy):
        ga = gy / b.data
        gb = -gy * a.data / (b.data * b.data)
        if ga.shape != a.data.shape:
            ga = np.sum(ga).reshape(a.data.shape)
        if gb.shape != b.data.shape:
            gb = np.sum(gb).reshape(b.data.shape)
        return ga, gb

    return Tensor.result(out, (a, b), backprop, "div")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backprop(gy):
        return (gy * c,)

    return Tensor.result(x.data * c, (x,), backprop, "scale")


def add_scalar(x: Tensor, c: float) -> Tensor:
    def backprop(gy):
        return (gy,)

    return Tensor.result(x.data + float(c), (x,), backprop, "add_scalar")


def pow_const(x: Tensor, k: float) -> Tensor:
    k = float(k)
    out = x.data**k

    def backprop(gy):
        if k == 0.0:
            return (np.zeros_like(x.data),)
        base = x.data.copy()
        if k < 1.0:
            # Subgradient 0 at base exactly 0 (true derivative diverges).
            zero = base == 0.0
            base[zero] = 1.0
            g = k * base ** (k - 1.0) * gy
            g[zero] = 0.0
        else:
            g = k * base ** (k - 1.0) * gy
        return (g,)

    return Tensor.result(out, (x,), backprop, "pow_const")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise NonFiniteValue("log: input must be strictly positive")

    def backprop(gy):
        return (gy / x.data,)

    return Tensor.result(np.log(x.data), (x,), backprop, "log")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise ShapeMismatch(f"clamp: lo {lo} must be < hi {hi}")
    out = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def backprop(gy):
        return (gy * inside,)

    return Tensor.result(out, (x,), backprop, "clamp")


# -- explicit broadcasts (attention gates) ----------------------------------


def mul_gate(x: Tensor, gate: Tensor) -> Tensor:
    """x [N,C,H,W] times a channel gate [N,C,1,1] or spatial gate [N,1,H,W]."""
    n, c, h, w = x.data.shape
    gs = gate.data.shape
    if gs == (n, c, 1, 1):
        axes = (2, 3)
    elif gs == (n, 1, h, w):
        axes = (1,)
    else:
        raise ShapeMismatch(f"mul_gate: gate {gs} does not broadcast over {x.data.shape}")

    def backprop(gy):
        gx = gy * gate.data
        gg = np.sum(gy * x.data, axis=axes, keepdims=True)
        return gx, gg

    return Tensor.result(x.data * gate.data, (x, gate), backprop, "mul_gate")


# -- activations -------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0

    def backprop(gy):
        return (gy * mask,)

    return Tensor.result(np.where(mask, x.data, 0.0), (x,), backprop, "relu")


def leaky_relu(x: Tensor, alpha: float = 0.01) -> Tensor:
    alpha = float(alpha)
    pos = x.data > 0.0

    def backprop(gy):
        return (gy * np.where(pos, 1.0, alpha),)

    return Tensor.result(np.where(pos, x.data, alpha * x.data), (x,), backprop, "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign so exp never overflows.
    s = np.empty_like(x.data)
    pos = x.data >= 0.0
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    s[~pos] = ex / (1.0 + ex)

    def backprop(gy):
        return (gy * s * (1.0 - s),)

    return Tensor.result(s, (x,), backprop, "sigmoid")


def silu(x: Tensor) -> Tensor:
    s = sigmoid(Tensor(x.data)).data

    def backprop(gy):
        return (gy * s * (1.0 + x.data * (1.0 - s)),)

    return Tensor.result(x.data * s, (x,), backprop, "silu")


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF form: x * Phi(x), not the tanh approximation."""
    phi_cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def backprop(gy):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (gy * (phi_cdf + x.data * pdf),)

    return Tensor.result(x.data * phi_cdf, (x,), backprop, "gelu")


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backprop(gy):
        dot = np.sum(gy * y, axis=axis, keepdims=True)
        return (y * (gy - dot),)

    return Tensor.result(y, (x,), backprop, "softmax")


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: surviving units are scaled by 1/(1-rate)."""
    rate = float(rate)
    if not 0.0 <= rate < 1.0:
        raise ShapeMismatch(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / keep

    def backprop(gy):
        return (gy * mask,)

    return Tensor.result(x.data * mask, (x,), backprop, "dropout")


# -- reductions ---------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    def backprop(gy):
        return (np.broadcast_to(gy, x.data.shape).astype(x.data.dtype, copy=True),)

    return Tensor.result(np.sum(x.data), (x,), backprop, "sum_all")


def mean_all(x: Tensor) -> Tensor:
    inv = 1.0 / x.data.size

    def backprop(gy):
        return (np.broadcast_to(gy * inv, x.data.shape).astype(x.data.dtype, copy=True),)

    return Tensor.result(np.mean(x.data), (x,), backprop, "mean_all")


def sum_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    def backprop(gy):
        g = gy if keepdims else np.expand_dims(gy, axis)
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=True),)

    return Tensor.result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backprop, "sum_axis")


# -- shape ops ---------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = x.data.reshape(shape)

    def backprop(gy):
        return (gy.reshape(x.data.shape),)

    return Tensor.result(out, (x,), backprop, "reshape")


def flatten(x: Tensor) -> Tensor:
    """[N, ...] -> [N, prod(rest)]."""
    n = x.data.shape[0]
    return reshape(x, (n, int(x.data.size // n)))


def concat_channels(*xs: Tensor) -> Tensor:
    if len(xs) < 2:
        raise ShapeMismatch("concat_channels needs at least two inputs")
    ref = xs[0].data.shape
    for t in xs[1:]:
        s = t.data.shape
        if len(s) != 4 or s[0] != ref[0] or s[2:] != ref[2:]:
            raise ShapeMismatch(f"concat_channels: {s} incompatible with {ref}")
    widths = [t.data.shape[1] for t in xs]
    offsets = np.cumsum([0] + widths)

    def backprop(gy):
        return tuple(gy[:, offsets[i] : offsets[i + 1]] for i in range(len(xs)))

    return Tensor.result(np.concatenate([t.data for t in xs], axis=1), xs, backprop, "concat_channels")


def channel_slice(x: Tensor, lo: int, hi: int) -> Tensor:
    c = x.data.shape[1]
    if not 0 <= lo < hi <= c:
        raise ShapeMismatch(f"channel_slice [{lo}:{hi}] out of range for {c} channels")

    def backprop(gy):
        g = np.zeros_like(x.data)
        g[:, lo:hi] = gy
        return (g,)

    return Tensor.result(x.data[:, lo:hi].copy(), (x,), backprop, "channel_slice")


def crop_center(x: Tensor, th: int, tw: int) -> Tensor:
    n, c, h, w = x.data.shape
    if th > h or tw > w or (h - th) % 2 or (w - tw) % 2:
        raise ShapeMismatch(f"crop_center: cannot center-crop {h}x{w} to {th}x{tw}")
    mh, mw = (h - th) // 2, (w - tw) // 2

    def backprop(gy):
        g = np.zeros_like(x.data)
        g[:, :, mh : mh + th, mw : mw + tw] = gy
        return (g,)

    return Tensor.result(x.data[:, :, mh : mh + th, mw : mw + tw].copy(), (x,), backprop, "crop_center")


# -- dense -------------------------------------------------------------------


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeMismatch(f"dense: x {x.data.shape} incompatible with w {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeMismatch(f"dense: bias {b.data.shape} incompatible with w {w.data.shape}")

    def backprop(gy):
        return gy @ w.data.T, x.data.T @ gy, gy.sum(axis=0)

    return Tensor.result(x.data @ w.data + b.data, (x, w, b), backprop, "dense")


# -- convolution family --------------------------------------------------------


def _check_4d(x: Tensor, op: str):
    if x.data.ndim != 4:
        raise ShapeMismatch(f"{op}: expected [N,C,H,W], got {x.data.shape}")


def _pad_pair(padding) -> tuple[int, int]:
    if isinstance(padding, (tuple, list)):
        ph, pw = int(padding[0]), int(padding[1])
    else:
        ph = pw = int(padding)
    if ph < 0 or pw < 0:
        raise ShapeMismatch(f"negative padding {padding}")
    return ph, pw


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding=0) -> Tensor:
    _check_4d(x, "conv2d")
    o, c, kh, kw = w.data.shape
    n, xc, h, ww_ = x.data.shape
    ph, pw = _pad_pair(padding)
    if xc != c:
        raise ShapeMismatch(f"conv2d: input has {xc} channels, weight expects {c}")
    if b.data.shape != (o,):
        raise ShapeMismatch(f"conv2d: bias {b.data.shape}, expected ({o},)")
    if stride < 1:
        raise ShapeMismatch(f"conv2d: bad stride {stride}")
    if h + 2 * ph < kh or ww_ + 2 * pw < kw:
        raise WindowTooLarge(f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2 * ph}x{ww_ + 2 * pw}")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    y = kernels.conv2d_fw(xd, wd, np.ascontiguousarray(b.data), stride, ph, pw)

    def backprop(gy):
        gy = np.ascontiguousarray(gy)
        gx = kernels.conv2d_bw_x(gy, wd, stride, ph, pw, h, ww_)
        gw = kernels.conv2d_bw_w(xd, gy, stride, ph, pw, kh, kw)
        return gx, gw, gy.sum(axis=(0, 2, 3))

    return Tensor.result(y, (x, w, b), backprop, "conv2d")


def transpose_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding=0) -> Tensor:
    """Gradient-of-conv upsampling; weight layout [C_in, C_out, kh, kw]."""
    _check_4d(x, "transpose_conv2d")
    ci, co, kh, kw = w.data.shape
    n, xc, h, ww_ = x.data.shape
    ph, pw = _pad_pair(padding)
    if xc != ci:
        raise ShapeMismatch(f"transpose_conv2d: input has {xc} channels, weight expects {ci}")
    if stride < 1:
        raise ShapeMismatch(f"transpose_conv2d: bad stride {stride}")
    if (h - 1) * stride + kh - 2 * ph <= 0 or (ww_ - 1) * stride + kw - 2 * pw <= 0:
        raise WindowTooLarge("transpose_conv2d: output would be empty")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    y = kernels.tconv2d_fw(xd, wd, stride, ph, pw)
    if b is not None:
        if b.data.shape != (co,):
            raise ShapeMismatch(f"transpose_conv2d: bias {b.data.shape}, expected ({co},)")
        y = y + b.data[None, :, None, None]

    def backprop(gy):
        gy = np.ascontiguousarray(gy)
        gx = kernels.tconv2d_bw_x(gy, wd, stride, ph, pw)
        gw = kernels.tconv2d_bw_w(xd, gy, stride, ph, pw, kh, kw)
        if b is None:
            return gx, gw
        return gx, gw, gy.sum(axis=(0, 2, 3))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.result(y, parents, backprop, "transpose_conv2d")


def maxpool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    _check_4d(x, "maxpool2d")
    s = int(stride) if stride is not None else int(k)
    n, c, h, w = x.data.shape
    if k > h or k > w:
        raise WindowTooLarge(f"maxpool2d: window {k} exceeds input {h}x{w}")
    if s < 1:
        raise ShapeMismatch(f"maxpool2d: bad stride {s}")
    y, idx = kernels.maxpool2d_fw(np.ascontiguousarray(x.data), k, s)

    def backprop(gy):
        return (kernels.maxpool2d_bw(np.ascontiguousarray(gy), idx, h, w),)

    return Tensor.result(y, (x,), backprop, "maxpool2d")


def avgpool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    _check_4d(x, "avgpool2d")
    s = int(stride) if stride is not None else int(k)
    n, c, h, w = x.data.shape
    if k > h or k > w:
        raise WindowTooLarge(f"avgpool2d: window {k} exceeds input {h}x{w}")
    if s < 1:
        raise ShapeMismatch(f"avgpool2d: bad stride {s}")
    y = kernels.avgpool2d_fw(np.ascontiguousarray(x.data), k, s)

    def backprop(gy):
        return (kernels.avgpool2d_bw(np.ascontiguousarray(gy), k, s, h, w),)

    return Tensor.result(y, (x,), backprop, "avgpool2d")


def channel_mean(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,1,H,W], mean over channels."""
    _check_4d(x, "channel_mean")
    c = x.data.shape[1]
    inv = 1.0 / c

    def backprop(gy):
        return (np.broadcast_to(gy * inv, x.data.shape).astype(x.data.dtype, copy=True),)

    return Tensor.result(x.data.mean(axis=1, keepdims=True), (x,), backprop, "channel_mean")


def channel_max(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,1,H,W], max over channels (grad to first argmax)."""
    _check_4d(x, "channel_max")
    arg = x.data.argmax(axis=1)  # [N,H,W]
    y = np.take_along_axis(x.data, arg[:, None], axis=1)

    def backprop(gy):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg[:, None], gy, axis=1)
        return (gx,)

    return Tensor.result(y, (x,), backprop, "channel_max")


def global_avgpool(x: Tensor) -> Tensor:
    _check_4d(x, "global_avgpool")
    n, c, h, w = x.data.shape
    inv = 1.0 / (h * w)

    def backprop(gy):
        return (np.broadcast_to(gy * inv, x.data.shape).astype(x.data.dtype, copy=True),)

    return Tensor.result(x.data.mean(axis=(2, 3), keepdims=True), (x,), backprop, "global_avgpool")


def filter_concat(x: Tensor, branches: Sequence[tuple]) -> Tensor:
    """Parallel convolutions of one input, concatenated along channels.

    Each branch is (w, b, stride, padding); all must yield equal H, W.
    """
    outs = [conv2d(x, w, b, stride=s, padding=p) for (w, b, s, p) in branches]
    return concat_channels(*outs)


# -- batch normalization -------------------------------------------------------


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch norm over [N,C,H,W] (reduction axes 0, 2, 3).

    Training mode normalizes with batch statistics and updates the running
    buffers in place as new = momentum*old + (1-momentum)*batch; eval mode
    normalizes with the running buffers.
    """
    _check_4d(x, "batch_norm")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeMismatch(f"batch_norm: gamma/beta must be ({c},)")
    if eps <= 0.0:
        raise ShapeMismatch(f"batch_norm: eps must be > 0, got {eps}")
    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backprop(gy):
        g_gamma = np.sum(gy * xhat, axis=axes)
        g_beta = np.sum(gy, axis=axes)
        gscaled = gy * gamma.data[None, :, None, None]
        if training:
            mean_g = gscaled.mean(axis=axes, keepdims=True)
            mean_gx = (gscaled * xhat).mean(axis=axes, keepdims=True)
            gx = inv_std[None, :, None, None] * (gscaled - mean_g - xhat * mean_gx)
        else:
            gx = gscaled * inv_std[None, :, None, None]
        return gx, g_gamma, g_beta

    return Tensor.result(y, (x, gamma, beta), backprop, "batch_norm")


# -- bilinear resize -----------------------------------------------------------


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Corner-aligned bilinear resampling of [N,C,H,W] to [N,C,out_h,out_w]."""
    from .imgproc import bilinear_axes

    _check_4d(x, "resize_bilinear")
    n, c, h, w = x.data.shape
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"resize_bilinear: bad target {out_h}x{out_w}")
    r0, r1, fr = bilinear_axes(h, out_h)
    c0, c1, fc = bilinear_axes(w, out_w)
    fr = fr.astype(x.data.dtype)
    fc = fc.astype(x.data.dtype)
    wr0, wr1 = (1.0 - fr)[:, None], fr[:, None]
    wc0, wc1 = (1.0 - fc)[None, :], fc[None, :]
    d = x.data
    y = (
        d[:, :, r0][:, :, :, c0] * (wr0 * wc0)
        + d[:, :, r0][:, :, :, c1] * (wr0 * wc1)
        + d[:, :, r1][:, :, :, c0] * (wr1 * wc0)
        + d[:, :, r1][:, :, :, c1] * (wr1 * wc1)
    )

    def backprop(gy):
        gx = np.zeros_like(x.data)
        flat = gx.reshape(n * c, h * w)
        for rows, cols, wgt in (
            (r0, c0, wr0 * wc0),
            (r0, c1, wr0 * wc1),
            (r1, c0, wr1 * wc0),
            (r1, c1, wr1 * wc1),
        ):
            target = (rows[:, None] * w + cols[None, :]).reshape(-1)
            contrib = (gy * wgt).reshape(n * c, -1)
            np.add.at(flat, (slice(None), target), contrib)
        return (gx,)

    return Tensor.result(y, (x,), backprop, "resize_bilinear")
