"""Pure-numpy kernels: convolution, transposed convolution, pooling.

These are the fallback implementations behind the PMADNET_KERNELS env flag
and the numerical reference the jit kernels are tested against.  Forward and
backward are separate functions taking and returning plain ndarrays; the
autodiff layer wires them into the graph.

Layouts: activations [N, C, H, W]; conv weights [O, C, kh, kw]; transposed
conv weights [C_in, C_out, kh, kw].  Convolution is cross-correlation (no
kernel flip), stride s, symmetric zero padding p.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND_NAME = "numpy"


def _pad_hw(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _windows(x: np.ndarray, kh: int, kw: int, s: int) -> np.ndarray:
    # [N, C, Ho, Wo, kh, kw] view over every stride-s window.
    w = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return w[:, :, ::s, ::s]


def conv2d_fw(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, ph: int, pw: int) -> np.ndarray:
    xp = _pad_hw(x, ph, pw)
    win = _windows(xp, w.shape[2], w.shape[3], stride)
    y = np.einsum("nchwpq,ocpq->nohw", win, w, optimize=True)
    return y + b[None, :, None, None]


def conv2d_bw_x(gy: np.ndarray, w: np.ndarray, stride: int, ph: int, pw: int, h: int, ww: int) -> np.ndarray:
    n, o, ho, wo = gy.shape
    _, c, kh, kw = w.shape
    gxp = np.zeros((n, c, h + 2 * ph, ww + 2 * pw), dtype=gy.dtype)
    # Scatter each kernel tap back over the strided window origins.
    for p in range(kh):
        for q in range(kw):
            contrib = np.einsum("nohw,oc->nchw", gy, w[:, :, p, q], optimize=True)
            gxp[:, :, p : p + (ho - 1) * stride + 1 : stride,
                q : q + (wo - 1) * stride + 1 : stride] += contrib
    if ph == 0 and pw == 0:
        return gxp
    return gxp[:, :, ph : ph + h, pw : pw + ww]


def conv2d_bw_w(x: np.ndarray, gy: np.ndarray, stride: int, ph: int, pw: int, kh: int, kw: int) -> np.ndarray:
    xp = _pad_hw(x, ph, pw)
    win = _windows(xp, kh, kw, stride)
    # Window count can exceed gy when the input had a stride remainder; the
    # forward never read those trailing windows, so drop them.
    win = win[:, :, : gy.shape[2], : gy.shape[3]]
    return np.einsum("nchwpq,nohw->ocpq", win, gy, optimize=True)


def tconv2d_fw(x: np.ndarray, w: np.ndarray, stride: int, ph: int, pw: int) -> np.ndarray:
    n, c, h, ww = x.shape
    _, o, kh, kw = w.shape
    full_h = (h - 1) * stride + kh
    full_w = (ww - 1) * stride + kw
    out = np.zeros((n, o, full_h, full_w), dtype=x.dtype)
    for p in range(kh):
        for q in range(kw):
            contrib = np.einsum("ncij,co->noij", x, w[:, :, p, q], optimize=True)
            out[:, :, p : p + (h - 1) * stride + 1 : stride,
                q : q + (ww - 1) * stride + 1 : stride] += contrib
    if ph == 0 and pw == 0:
        return out
    return out[:, :, ph : full_h - ph, pw : full_w - pw]


def tconv2d_bw_x(gy: np.ndarray, w: np.ndarray, stride: int, ph: int, pw: int) -> np.ndarray:
    kh, kw = w.shape[2], w.shape[3]
    gyp = _pad_hw(gy, ph, pw)
    win = _windows(gyp, kh, kw, stride)
    return np.einsum("nohwpq,copq->nchw", win, w, optimize=True)


def tconv2d_bw_w(x: np.ndarray, gy: np.ndarray, stride: int, ph: int, pw: int, kh: int, kw: int) -> np.ndarray:
    gyp = _pad_hw(gy, ph, pw)
    win = _windows(gyp, kh, kw, stride)
    return np.einsum("ncij,noijpq->copq", x, win, optimize=True)


def maxpool2d_fw(x: np.ndarray, k: int, s: int):
    n, c, h, w = x.shape
    win = _windows(x, k, k, s)
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=4)  # first max wins ties (row-major window order)
    y = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
    # Convert the in-window index to a flat H*W index for the scatter pass.
    pi, qi = np.divmod(arg, k)
    rows = np.arange(ho)[None, None, :, None] * s + pi
    cols = np.arange(wo)[None, None, None, :] * s + qi
    idx = (rows * w + cols).astype(np.int64)
    return np.ascontiguousarray(y), idx


def maxpool2d_bw(gy: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    n, c = gy.shape[0], gy.shape[1]
    gx = np.zeros((n * c, h * w), dtype=gy.dtype)
    # Lift the per-image flat index to a single (n*c, h*w) scatter; windows
    # can overlap when s < k, so accumulation (add.at) is required.
    plane = np.arange(n * c, dtype=np.int64)[:, None] * (h * w)
    flat_idx = (idx.reshape(n * c, -1) + plane).reshape(-1)
    np.add.at(gx.reshape(-1), flat_idx, gy.reshape(-1))
    return gx.reshape(n, c, h, w)


def avgpool2d_fw(x: np.ndarray, k: int, s: int) -> np.ndarray:
    win = _windows(x, k, k, s)
    return win.mean(axis=(4, 5))


def avgpool2d_bw(gy: np.ndarray, k: int, s: int, h: int, w: int) -> np.ndarray:
    n, c, ho, wo = gy.shape
    gx = np.zeros((n, c, h, w), dtype=gy.dtype)
    share = gy / (k * k)
    for p in range(k):
        for q in range(k):
            gx[:, :, p : p + (ho - 1) * s + 1 : s,
               q : q + (wo - 1) * s + 1 : s] += share
    return gx
