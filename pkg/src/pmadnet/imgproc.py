"""Image preprocessing: gamma correction, Gaussian smoothing, bilinear
resampling, min-max normalization.

Images are float64 arrays in [0, 1], shaped (H, W) for grayscale or
(H, W, C) with C in {1, 3}.  The full pipeline applies the four stages in
the fixed order gamma -> smooth -> resize -> normalize.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, InvalidGamma, ShapeMismatch


def _check_image(img: np.ndarray, op: str) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] not in (1, 3)):
        raise ShapeMismatch(f"{op}: expected (H,W) or (H,W,1|3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeMismatch(f"{op}: empty image {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        img = img.astype(np.float64)
    return img


def gamma_correct(img: np.ndarray, gamma: float) -> np.ndarray:
    """Power-law intensity mapping v -> v**gamma on [0, 1] values."""
    img = _check_image(img, "gamma_correct")
    if not (np.isfinite(gamma) and gamma > 0.0):
        raise InvalidGamma(f"gamma must be finite and > 0, got {gamma}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ConfigError("gamma_correct: image values must lie in [0, 1]")
    return img**float(gamma)


def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ConfigError(f"gaussian kernel size must be odd and >= 1, got {size}")
    if not (np.isfinite(sigma) and sigma > 0.0):
        raise ConfigError(f"gaussian sigma must be finite and > 0, got {sigma}")
    r = size // 2
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized 2-D kernel exp(-(i^2+j^2)/(2 sigma^2)); sums to 1."""
    g = gaussian_kernel_1d(size, sigma)
    return np.outer(g, g)


def _filter_plane(plane: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = g.size // 2
    if r == 0:
        return plane.copy()
    if plane.shape[0] <= r or plane.shape[1] <= r:
        raise ShapeMismatch(f"gaussian_filter: kernel radius {r} exceeds image {plane.shape}")
    # Separable passes with mirror (reflect) border handling.
    p = np.pad(plane, ((r, r), (0, 0)), mode="reflect")
    rows = sliding_window_view(p, g.size, axis=0)
    out = rows @ g
    p = np.pad(out, ((0, 0), (r, r)), mode="reflect")
    cols = sliding_window_view(p, g.size, axis=1)
    return cols @ g


def gaussian_filter(img: np.ndarray, sigma: float, size: int) -> np.ndarray:
    """Smooth with the separable Gaussian; reflect padding keeps the shape."""
    img = _check_image(img, "gaussian_filter")
    g = gaussian_kernel_1d(size, sigma)
    if img.ndim == 2:
        return _filter_plane(img, g)
    return np.stack([_filter_plane(img[:, :, c], g) for c in range(img.shape[2])], axis=2)


def bilinear_axes(src: int, dst: int):
    """Corner-aligned gather indices and fractions for one axis."""
    if dst == 1:
        pos = np.zeros(1, dtype=np.float64)
    else:
        pos = np.arange(dst, dtype=np.float64) * ((src - 1) / (dst - 1))
    i0 = np.minimum(np.floor(pos).astype(np.int64), src - 1)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, pos - i0


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resampling (up or down)."""
    img = _check_image(img, "resize_bilinear")
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"resize_bilinear: bad target {out_h}x{out_w}")
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    r0, r1, fr = bilinear_axes(img.shape[0], out_h)
    c0, c1, fc = bilinear_axes(img.shape[1], out_w)
    wr0, wr1 = (1.0 - fr)[:, None, None], fr[:, None, None]
    wc0, wc1 = (1.0 - fc)[None, :, None], fc[None, :, None]
    y = (
        img[r0][:, c0] * (wr0 * wc0)
        + img[r0][:, c1] * (wr0 * wc1)
        + img[r1][:, c0] * (wr1 * wc0)
        + img[r1][:, c1] * (wr1 * wc1)
    )
    return y[:, :, 0] if squeeze else y


def resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resampling; the right choice for label masks."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ShapeMismatch(f"resize_nearest: expected (H,W), got {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"resize_nearest: bad target {out_h}x{out_w}")
    r0, r1, fr = bilinear_axes(img.shape[0], out_h)
    c0, c1, fc = bilinear_axes(img.shape[1], out_w)
    rows = np.where(fr < 0.5, r0, r1)
    cols = np.where(fc < 0.5, c0, c1)
    return img[rows][:, cols]


def normalize_minmax(img: np.ndarray) -> np.ndarray:
    """Map values to [0, 1]; a constant image maps to all zeros."""
    img = _check_image(img, "normalize_minmax")
    lo = img.min()
    hi = img.max()
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


@dataclass
class PreprocessConfig:
    """Knobs for the four-stage pipeline."""

    gamma: float = 0.8
    sigma: float = 1.0
    kernel_size: int = 5
    target_h: int = 256
    target_w: int = 256


STAGE_NAMES = ("gamma", "smooth", "resize", "normalize")


def preprocess(img: np.ndarray, cfg: PreprocessConfig, return_stages: bool = False):
    """Run gamma -> smooth -> resize -> normalize.

    With return_stages, returns an ordered dict of every intermediate so
    callers can dump or hash them.
    """
    g = gamma_correct(img, cfg.gamma)
    s = gaussian_filter(g, cfg.sigma, cfg.kernel_size)
    r = resize_bilinear(s, cfg.target_h, cfg.target_w)
    n = normalize_minmax(r)
    if return_stages:
        return {"gamma": g, "smooth": s, "resize": r, "normalize": n}
    return n
