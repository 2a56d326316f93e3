"""Numba-compiled kernels, numerically matching kernels.reference.

Same function surface and array layouts as the reference module.  fastmath
stays off so results are deterministic run to run.  Accumulation order
differs from numpy's einsum, so the two backends agree to float rounding
(tests pin the tolerance), while each backend on its own is bit-identical
across runs.

Layout notes: the valid kernel-tap ranges are hoisted out of the hot loops
(padding only trims taps at the borders), and weights are repacked so the
innermost loop runs over a contiguous axis the compiler can vectorize.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True, fastmath=False)
def _repack_last(w):
    """[a, b, kh, kw] -> contiguous [b, kh, kw, a]."""
    a, b, kh, kw = w.shape
    out = np.empty((b, kh, kw, a), dtype=w.dtype)
    for ai in range(a):
        for bi in range(b):
            for p in range(kh):
                for q in range(kw):
                    out[bi, p, q, ai] = w[ai, bi, p, q]
    return out


@njit(cache=True, fastmath=False)
def conv2d_fw(x, w, b, stride, ph, pw):
    n, c, h, ww = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (ww + 2 * pw - kw) // stride + 1
    wt = _repack_last(w)  # [c, kh, kw, o]
    y = np.empty((n, o, ho, wo), dtype=x.dtype)
    acc = np.empty(o, dtype=x.dtype)
    for ni in range(n):
        for i in range(ho):
            i0 = i * stride - ph
            p_lo = -i0 if i0 < 0 else 0
            p_hi = h - i0 if i0 + kh > h else kh
            for j in range(wo):
                j0 = j * stride - pw
                q_lo = -j0 if j0 < 0 else 0
                q_hi = ww - j0 if j0 + kw > ww else kw
                for oi in range(o):
                    acc[oi] = b[oi]
                for ci in range(c):
                    for p in range(p_lo, p_hi):
                        ii = i0 + p
                        for q in range(q_lo, q_hi):
                            v = x[ni, ci, ii, j0 + q]
                            for oi in range(o):
                                acc[oi] += v * wt[ci, p, q, oi]
                for oi in range(o):
                    y[ni, oi, i, j] = acc[oi]
    return y


@njit(cache=True, fastmath=False)
def conv2d_bw_x(gy, w, stride, ph, pw, h, ww):
    n, o, ho, wo = gy.shape
    _, c, kh, kw = w.shape
    wt = _repack_last(w)  # [c, kh, kw, o]
    gx = np.zeros((n, c, h, ww), dtype=gy.dtype)
    gvec = np.empty(o, dtype=gy.dtype)
    for ni in range(n):
        for i in range(ho):
            i0 = i * stride - ph
            p_lo = -i0 if i0 < 0 else 0
            p_hi = h - i0 if i0 + kh > h else kh
            for j in range(wo):
                j0 = j * stride - pw
                q_lo = -j0 if j0 < 0 else 0
                q_hi = ww - j0 if j0 + kw > ww else kw
                for oi in range(o):
                    gvec[oi] = gy[ni, oi, i, j]
                for ci in range(c):
                    for p in range(p_lo, p_hi):
                        ii = i0 + p
                        for q in range(q_lo, q_hi):
                            acc = gvec[0] * wt[ci, p, q, 0]
                            for oi in range(1, o):
                                acc += gvec[oi] * wt[ci, p, q, oi]
                            gx[ni, ci, ii, j0 + q] += acc
    return gx


@njit(cache=True, fastmath=False)
def conv2d_bw_w(x, gy, stride, ph, pw, kh, kw):
    n, c, h, ww = x.shape
    _, o, ho, wo = gy.shape
    gwt = np.zeros((c, kh, kw, o), dtype=x.dtype)
    gvec = np.empty(o, dtype=x.dtype)
    for ni in range(n):
        for i in range(ho):
            i0 = i * stride - ph
            p_lo = -i0 if i0 < 0 else 0
            p_hi = h - i0 if i0 + kh > h else kh
            for j in range(wo):
                j0 = j * stride - pw
                q_lo = -j0 if j0 < 0 else 0
                q_hi = ww - j0 if j0 + kw > ww else kw
                for oi in range(o):
                    gvec[oi] = gy[ni, oi, i, j]
                for ci in range(c):
                    for p in range(p_lo, p_hi):
                        ii = i0 + p
                        for q in range(q_lo, q_hi):
                            v = x[ni, ci, ii, j0 + q]
                            for oi in range(o):
                                gwt[ci, p, q, oi] += v * gvec[oi]
    gw = np.empty((o, c, kh, kw), dtype=x.dtype)
    for oi in range(o):
        for ci in range(c):
            for p in range(kh):
                for q in range(kw):
                    gw[oi, ci, p, q] = gwt[ci, p, q, oi]
    return gw


@njit(cache=True, fastmath=False)
def tconv2d_fw(x, w, stride, ph, pw):
    n, c, h, ww = x.shape
    _, o, kh, kw = w.shape
    oh = (h - 1) * stride + kh - 2 * ph
    ow = (ww - 1) * stride + kw - 2 * pw
    wt = _repack_last(w)  # [o, kh, kw, c]
    y = np.zeros((n, o, oh, ow), dtype=x.dtype)
    xvec = np.empty(c, dtype=x.dtype)
    for ni in range(n):
        for i in range(h):
            i0 = i * stride - ph
            p_lo = -i0 if i0 < 0 else 0
            p_hi = oh - i0 if i0 + kh > oh else kh
            for j in range(ww):
                j0 = j * stride - pw
                q_lo = -j0 if j0 < 0 else 0
                q_hi = ow - j0 if j0 + kw > ow else kw
                for ci in range(c):
                    xvec[ci] = x[ni, ci, i, j]
                for oi in range(o):
                    for p in range(p_lo, p_hi):
                        ii = i0 + p
                        for q in range(q_lo, q_hi):
                            acc = xvec[0] * wt[oi, p, q, 0]
                            for ci in range(1, c):
                                acc += xvec[ci] * wt[oi, p, q, ci]
                            y[ni, oi, ii, j0 + q] += acc
    return y


@njit(cache=True, fastmath=False)
def tconv2d_bw_x(gy, w, stride, ph, pw):
    n, o, oh, ow = gy.shape
    c, _, kh, kw = w.shape
    h = (oh + 2 * ph - kh) // stride + 1
    ww = (ow + 2 * pw - kw) // stride + 1
    wt = _repack_last(w)  # [o, kh, kw, c]
    gx = np.empty((n, c, h, ww), dtype=gy.dtype)
    acc = np.empty(c, dtype=gy.dtype)
    for ni in range(n):
        for i in range(h):
            i0 = i * stride - ph
            p_lo = -i0 if i0 < 0 else 0
            p_hi = oh - i0 if i0 + kh > oh else kh
            for j in range(ww):
                j0 = j * stride - pw
                q_lo = -j0 if j0 < 0 else 0
                q_hi = ow - j0 if j0 + kw > ow else kw
                for ci in range(c):
                    acc[ci] = 0
                for oi in range(o):
                    for p in range(p_lo, p_hi):
                        ii = i0 + p
                        for q in range(q_lo, q_hi):
                            g = gy[ni, oi, ii, j0 + q]
                            for ci in range(c):
                                acc[ci] += g * wt[oi, p, q, ci]
                for ci in range(c):
                    gx[ni, ci, i, j] = acc[ci]
    return gx


@njit(cache=True, fastmath=False)
def tconv2d_bw_w(x, gy, stride, ph, pw, kh, kw):
    n, c, h, ww = x.shape
    _, o, oh, ow = gy.shape
    gwt = np.zeros((o, kh, kw, c), dtype=x.dtype)
    xvec = np.empty(c, dtype=x.dtype)
    for ni in range(n):
        for i in range(h):
            i0 = i * stride - ph
            p_lo = -i0 if i0 < 0 else 0
            p_hi = oh - i0 if i0 + kh > oh else kh
            for j in range(ww):
                j0 = j * stride - pw
                q_lo = -j0 if j0 < 0 else 0
                q_hi = ow - j0 if j0 + kw > ow else kw
                for ci in range(c):
                    xvec[ci] = x[ni, ci, i, j]
                for oi in range(o):
                    for p in range(p_lo, p_hi):
                        ii = i0 + p
                        for q in range(q_lo, q_hi):
                            g = gy[ni, oi, ii, j0 + q]
                            for ci in range(c):
                                gwt[oi, p, q, ci] += g * xvec[ci]
    gw = np.empty((c, o, kh, kw), dtype=x.dtype)
    for ci in range(c):
        for oi in range(o):
            for p in range(kh):
                for q in range(kw):
                    gw[ci, oi, p, q] = gwt[oi, p, q, ci]
    return gw


@njit(cache=True, fastmath=False)
def maxpool2d_fw(x, k, s):
    n, c, h, w = x.shape
    ho = (h - k) // s + 1
    wo = (w - k) // s + 1
    y = np.empty((n, c, ho, wo), dtype=x.dtype)
    idx = np.empty((n, c, ho, wo), dtype=np.int64)
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    r0 = i * s
                    c0 = j * s
                    best = x[ni, ci, r0, c0]
                    bi = r0
                    bj = c0
                    for p in range(k):
                        for q in range(k):
                            v = x[ni, ci, r0 + p, c0 + q]
                            if v > best:
                                best = v
                                bi = r0 + p
                                bj = c0 + q
                    y[ni, ci, i, j] = best
                    idx[ni, ci, i, j] = bi * w + bj
    return y, idx


@njit(cache=True, fastmath=False)
def maxpool2d_bw(gy, idx, h, w):
    n, c, ho, wo = gy.shape
    gx = np.zeros((n, c, h, w), dtype=gy.dtype)
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    f = idx[ni, ci, i, j]
                    gx[ni, ci, f // w, f % w] += gy[ni, ci, i, j]
    return gx


@njit(cache=True, fastmath=False)
def avgpool2d_fw(x, k, s):
    n, c, h, w = x.shape
    ho = (h - k) // s + 1
    wo = (w - k) // s + 1
    y = np.empty((n, c, ho, wo), dtype=x.dtype)
    inv = 1.0 / (k * k)
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for p in range(k):
                        for q in range(k):
                            acc += x[ni, ci, i * s + p, j * s + q]
                    y[ni, ci, i, j] = acc * inv
    return y


@njit(cache=True, fastmath=False)
def avgpool2d_bw(gy, k, s, h, w):
    n, c, ho, wo = gy.shape
    gx = np.zeros((n, c, h, w), dtype=gy.dtype)
    inv = 1.0 / (k * k)
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    g = gy[ni, ci, i, j] * inv
                    for p in range(k):
                        for q in range(k):
                            gx[ni, ci, i * s + p, j * s + q] += g
    return gx
