"""Reading and writing images and masks (PNG/PGM via Pillow).

Decoding and encoding are delegated to Pillow; everything numerical stays in
this package.  Images come back as float64 in [0, 1]; masks as uint8 {0, 1}.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ShapeMismatch, UnreadableImage

_SUPPORTED = (".png", ".pgm")


def load_image(path: str) -> np.ndarray:
    """Decode to float64 [0, 1]; grayscale -> (H,W), color -> (H,W,3)."""
    try:
        with Image.open(path) as im:
            if im.mode in ("RGB", "RGBA", "P"):
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            else:
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UnreadableImage(f"cannot decode {path}: {exc}") from exc
    return arr


def load_gray(path: str) -> np.ndarray:
    """Decode to single-channel float64 [0, 1], collapsing color if present."""
    arr = load_image(path)
    if arr.ndim == 3:
        # Rec. 601 luma, the conventional grayscale reduction.
        arr = arr @ np.array([0.299, 0.587, 0.114])
    return arr


def load_mask(path: str) -> np.ndarray:
    """Decode a label mask to uint8 {0, 1} (threshold at half intensity)."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UnreadableImage(f"cannot decode {path}: {exc}") from exc
    return (arr > 127).astype(np.uint8)


def save_image(path: str, img: np.ndarray):
    """Encode float [0, 1] (or uint8) grayscale/color to PNG or PGM."""
    ext = os.path.splitext(path)[1].lower()
    if ext not in _SUPPORTED:
        raise ShapeMismatch(f"save_image: unsupported extension {ext!r} (use .png or .pgm)")
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if ext == ".pgm" and arr.ndim != 2:
        raise ShapeMismatch("save_image: PGM supports grayscale only")
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path)


def save_mask(path: str, mask: np.ndarray):
    """Encode a {0, 1} mask as an 8-bit image (0 or 255)."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeMismatch(f"save_mask: expected (H,W), got {arr.shape}")
    save_image(path, (arr > 0).astype(np.uint8) * 255)
