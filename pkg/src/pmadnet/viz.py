"""Presentation artifacts: mask overlays, training curves, CAM panels.

Everything here is display-only. Rendering goes through Pillow and the
matplotlib Agg backend; nothing in this module feeds back into training
or evaluation numbers.
"""

from __future__ import annotations

import csv
import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import imageio
from .errors import IOFailure, ShapeMismatch

# Pure red never collides with a tinted pixel: fills keep G == B == 0.65*gray
# and reach R == 255 only when gray == 255, which forces G == 166.
CONTOUR_RGB = (255, 0, 0)
FILL_ALPHA = 0.35

CURVE_COLUMNS = ("epoch", "dice", "iou", "pixel_accuracy", "loss_focal",
                 "loss_jaccard", "loss_total", "cls_accuracy", "precision",
                 "recall", "f1")
_LOSS_KEYS = ("loss_total", "loss_focal", "loss_jaccard")
_RATE_KEYS = ("dice", "iou", "pixel_accuracy", "cls_accuracy",
              "precision", "recall", "f1")


def _as_gray01(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D grayscale image, got {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return np.clip(arr.astype(np.float64), 0.0, 1.0)


def mask_contour(mask: np.ndarray) -> np.ndarray:
    """Boolean map of mask pixels with at least one 4-neighbour outside.

    Pixels beyond the image border count as outside, so a mask touching
    the edge is outlined there too.
    """
    m = np.asarray(mask) > 0
    if m.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D mask, got {m.shape}")
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~interior


def overlay_rgb(image, mask) -> np.ndarray:
    """Grayscale image as RGB with the mask tinted and outlined.

    Mask interiors are alpha-blended toward the contour colour; contour
    pixels get the exact colour so they stay machine-recoverable. An empty
    mask returns the plain grayscale replication untouched.
    """
    gray = _as_gray01(image)
    m = np.asarray(mask) > 0
    if m.shape != gray.shape:
        raise ShapeMismatch(
            f"image {gray.shape} and mask {m.shape} dims must match")
    base = np.round(gray * 255.0)
    rgb = np.repeat(base[:, :, None], 3, axis=2)
    tint = np.asarray(CONTOUR_RGB, dtype=np.float64)
    rgb[m] = np.round((1.0 - FILL_ALPHA) * base[m][:, None]
                      + FILL_ALPHA * tint[None, :])
    rgb[mask_contour(m)] = tint
    return rgb.astype(np.uint8)


def emit_overlay(image, mask, out_path: str):
    """Write the overlay_rgb rendering of (image, mask) as a PNG."""
    rgb = overlay_rgb(image, mask)
    try:
        imageio.save_image(out_path, rgb)
    except OSError as exc:
        raise IOFailure(f"cannot write overlay {out_path}: {exc}") from exc


def _curve_rows(reports) -> list[dict]:
    rows = []
    for i, rep in enumerate(reports):
        d = rep.to_json_dict() if hasattr(rep, "to_json_dict") else dict(rep)
        row = {"epoch": i + 1}
        for key in CURVE_COLUMNS[1:]:
            row[key] = float(d.get(key, 0.0))
        rows.append(row)
    return rows


def emit_curves(reports, out_csv: str, out_png: str):
    """Write per-epoch metrics as a CSV table plus a rendered line plot.

    reports: sequence of MetricsReport (or plain dicts with the same keys),
    one per epoch in order. Metric series that are identically zero (the
    fields the evaluated model never fills) are left off the plot.
    """
    rows = _curve_rows(reports)
    if not rows:
        raise ShapeMismatch("emit_curves needs at least one epoch")
    try:
        with open(out_csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    except OSError as exc:
        raise IOFailure(f"cannot write curves {out_csv}: {exc}") from exc

    epochs = [row["epoch"] for row in rows]
    fig, (ax_loss, ax_rate) = plt.subplots(1, 2, figsize=(10.0, 4.0))
    for key in _LOSS_KEYS:
        series = [row[key] for row in rows]
        if any(series):
            ax_loss.plot(epochs, series, label=key)
    for key in _RATE_KEYS:
        series = [row[key] for row in rows]
        if any(series):
            ax_rate.plot(epochs, series, label=key)
    for ax, title in ((ax_loss, "loss"), (ax_rate, "score")):
        ax.set_xlabel("epoch")
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=8)
    ax_rate.set_ylim(0.0, 1.05)
    fig.tight_layout()
    _save_figure(fig, out_png)


def emit_cam_panel(panels, out_path: str):
    """Grid figure of CAM heatmaps blended over their source images.

    panels: sequence of (title, image, cam) with image a 2-D grayscale
    array and cam a [0, 1] heatmap of any size (drawn stretched to the
    image extent). Lays the panels out two per row.
    """
    if not panels:
        raise ShapeMismatch("emit_cam_panel needs at least one panel")
    cols = min(2, len(panels))
    nrows = math.ceil(len(panels) / cols)
    fig, axes = plt.subplots(nrows, cols, squeeze=False,
                             figsize=(4.0 * cols, 4.0 * nrows))
    flat = [ax for row in axes for ax in row]
    for ax in flat:
        ax.set_axis_off()
    for ax, (title, image, cam) in zip(flat, panels):
        gray = _as_gray01(image)
        heat = np.asarray(cam, dtype=np.float64)
        ax.imshow(gray, cmap="gray", vmin=0.0, vmax=1.0)
        ax.imshow(heat, cmap="jet", vmin=0.0, vmax=1.0, alpha=0.5,
                  extent=(-0.5, gray.shape[1] - 0.5,
                          gray.shape[0] - 0.5, -0.5))
        ax.set_title(str(title), fontsize=10)
    fig.tight_layout()
    _save_figure(fig, out_path)


def _save_figure(fig, out_path: str):
    # A pinned empty Date keeps the PNG byte-stable across reruns.
    try:
        fig.savefig(out_path, metadata={"Date": None})
    except OSError as exc:
        raise IOFailure(f"cannot write figure {out_path}: {exc}") from exc
    finally:
        plt.close(fig)
