"""Gradient-weighted class activation maps for both networks.

The map is built the classic way: pick a layer, take the gradient of a
scalar score with respect to that layer's activation, average the gradient
spatially to get one weight per channel, and rectify the weighted sum of
activation channels.  The raw map is then upsampled to the input size and
min-max normalized, with an all-zero map staying all-zero.

For the segmentation network the score is the mean foreground probability
over a region of interest (the whole image when no region is given); for
the classifier it is the pre-softmax score of the chosen class.
"""

from __future__ import annotations

import numpy as np

from . import imgproc, ops
from .clsnet import CLASS_NAMES, CSFECNet
from .errors import ConfigError, ShapeMismatch
from .segnet import PMADLinkNet
from .tensor import Tensor


def channel_weights(activation: Tensor) -> np.ndarray:
    """Per-channel weights: spatial mean of d(score)/d(activation)."""
    if activation.grad is None:
        raise ShapeMismatch("activation carries no gradient; run backward first")
    return activation.grad.mean(axis=(2, 3))


def raw_cam(activation: Tensor) -> np.ndarray:
    """ReLU of the weight-blended activation channels, shape [h, w]."""
    w = channel_weights(activation)[0]
    blended = np.tensordot(w, activation.data[0], axes=(0, 0))
    return np.maximum(blended, 0.0)


def normalize_cam(cam: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear-upsample to the input size and min-max squash to [0, 1].

    A constant map (all-zero in particular) has no range to stretch and
    comes back all-zero.
    """
    cam = imgproc.resize_bilinear(np.asarray(cam, dtype=np.float64), out_h, out_w)
    lo, hi = float(cam.min()), float(cam.max())
    # Interpolating a constant map can leave float jitter of a few ulps;
    # treat that as no range rather than stretching noise to [0, 1].
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.zeros_like(cam)
    return (cam - lo) / (hi - lo)


def _as_batch(image: np.ndarray, channels: int) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[0] != 1 or x.shape[1] != channels:
        raise ShapeMismatch(
            f"expected one {channels}-channel image, got array of shape {np.asarray(image).shape}")
    return x


def _class_index(target) -> int | None:
    if target is None:
        return None
    if isinstance(target, str):
        if target not in CLASS_NAMES:
            raise ShapeMismatch(f"unknown class {target!r}, expected one of {CLASS_NAMES}")
        return CLASS_NAMES.index(target)
    idx = int(target)
    if not 0 <= idx < len(CLASS_NAMES):
        raise ShapeMismatch(f"class index {idx} out of range")
    return idx


def _seg_score(probs: Tensor, region) -> Tensor:
    n, k, h, w = probs.data.shape
    fg = ops.channel_slice(probs, 1, 2)
    if region is None:
        return ops.mean_all(fg)
    region = np.asarray(region)
    if region.shape != (h, w):
        raise ShapeMismatch(f"region {region.shape} does not match image {h}x{w}")
    weight = region.astype(np.float64)
    total = weight.sum()
    if total == 0:
        raise ShapeMismatch("region selects no pixels")
    # mean_all divides by the full element count; pre-scaling the region
    # turns that into an exact mean over the selected pixels.
    weight = weight * (n * 1 * h * w / total)
    return ops.mean_all(ops.mul(fg, Tensor(weight[None, None], requires_grad=False)))


def _cls_score(scores: Tensor, idx: int) -> Tensor:
    onehot = np.zeros_like(scores.data)
    onehot[0, idx] = 1.0
    return ops.sum_all(ops.mul(scores, Tensor(onehot, requires_grad=False)))


def grad_cam(model, image, target=None, layer_name: str | None = None) -> np.ndarray:
    """Heatmap [H, W] in [0, 1] for one input image.

    target: for the classifier, a class index or name (default: the
    predicted class); for the segmentation network, an optional boolean
    region the foreground score is averaged over (default: whole image).
    layer_name: any name from model.layer_names() (default:
    model.default_cam_layer()); unknown names raise UnknownLayer.
    """
    if not isinstance(model, (PMADLinkNet, CSFECNet)):
        raise ConfigError(f"grad_cam supports the two bundled networks, got {type(model).__name__}")
    layer = layer_name if layer_name is not None else model.default_cam_layer()
    model.eval()
    model.zero_grad()
    if isinstance(model, PMADLinkNet):
        x = _as_batch(image, model.config.in_channels)
        probs = model.forward(Tensor(x, requires_grad=False), capture={layer})
        score = _seg_score(probs, target)
    elif isinstance(model, CSFECNet):
        x = _as_batch(image, 3)
        probs, scores = model.forward(Tensor(x, requires_grad=False),
                                      capture={layer}, return_scores=True)
        idx = _class_index(target)
        if idx is None:
            idx = int(np.argmax(probs.data[0]))
        score = _cls_score(scores, idx)
    activation = model.captured[layer]
    score.backward()
    cam = raw_cam(activation)
    model.zero_grad()
    return normalize_cam(cam, x.shape[2], x.shape[3])
