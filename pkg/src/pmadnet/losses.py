"""Training losses: focal, soft Jaccard, soft Dice, and cross-entropy.

Segmentation losses consume per-class probability maps [N, K, H, W] with a
one-hot target of the same shape; the soft overlap losses read only the
foreground channel (index 1).  The classifier loss consumes raw class
scores and stays in log-sum-exp form throughout.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import InvalidGamma, ShapeMismatch
from .tensor import Tensor

EPS_OVERLAP = 1e-6
PROB_FLOOR = 1e-7


def _as_constant(target) -> Tensor:
    if isinstance(target, Tensor):
        return Tensor(target.data, requires_grad=False)
    return Tensor(np.asarray(target, dtype=np.float64), requires_grad=False)


def _check_same_shape(probs: Tensor, target: Tensor):
    if probs.data.shape != target.data.shape:
        raise ShapeMismatch(
            f"probabilities {probs.data.shape} and target {target.data.shape} differ")


def focal_loss(probs: Tensor, target, gamma: float = 2.0) -> Tensor:
    """Mean of -(1 - p_t)^gamma * log(p_t) with p_t clamped to [1e-7, 1].

    At gamma 0 this reduces exactly to cross-entropy.
    """
    if gamma < 0:
        raise InvalidGamma(f"focusing parameter must be >= 0, got {gamma}")
    t = _as_constant(target)
    _check_same_shape(probs, t)
    p_true = ops.sum_axis(ops.mul(probs, t), axis=1)
    p_true = ops.clamp(p_true, PROB_FLOOR, 1.0)
    damp = ops.pow_const(ops.add_scalar(ops.scale(p_true, -1.0), 1.0), gamma)
    return ops.mean_all(ops.mul(damp, ops.scale(ops.log(p_true), -1.0)))


def _overlap_sums(probs: Tensor, target) -> tuple[Tensor, Tensor, Tensor]:
    t = _as_constant(target)
    _check_same_shape(probs, t)
    if probs.data.ndim != 4 or probs.data.shape[1] < 2:
        raise ShapeMismatch(
            f"expected [N, K>=2, H, W] probability maps, got {probs.data.shape}")
    p = ops.channel_slice(probs, 1, 2)
    g = ops.channel_slice(t, 1, 2)
    inter = ops.sum_all(ops.mul(p, g))
    return inter, ops.sum_all(p), ops.sum_all(g)


def jaccard_loss(probs: Tensor, target) -> Tensor:
    """1 - (|P and G| + eps) / (|P or G| + eps), soft masks."""
    inter, sp, sg = _overlap_sums(probs, target)
    union = ops.sub(ops.add(sp, sg), inter)
    ratio = ops.div(ops.add_scalar(inter, EPS_OVERLAP), ops.add_scalar(union, EPS_OVERLAP))
    return ops.add_scalar(ops.scale(ratio, -1.0), 1.0)


def dice_loss(probs: Tensor, target) -> Tensor:
    """1 - (2 |P and G| + eps) / (|P| + |G| + eps), soft masks."""
    inter, sp, sg = _overlap_sums(probs, target)
    ratio = ops.div(ops.add_scalar(ops.scale(inter, 2.0), EPS_OVERLAP),
                    ops.add_scalar(ops.add(sp, sg), EPS_OVERLAP))
    return ops.add_scalar(ops.scale(ratio, -1.0), 1.0)


def total_seg_loss(probs: Tensor, target, gamma: float = 2.0,
                   include_dice: bool = False) -> Tensor:
    """focal + jaccard, optionally + dice; a literal sum of the terms."""
    total = ops.add(focal_loss(probs, target, gamma), jaccard_loss(probs, target))
    if include_dice:
        total = ops.add(total, dice_loss(probs, target))
    return total


def cce_loss(scores: Tensor, target) -> Tensor:
    """Mean negative log-softmax of the true class, in log-sum-exp form.

    target may be integer class labels [N] or a one-hot array [N, K].
    Adding any constant to all scores of a sample leaves the loss unchanged.
    """
    x = scores.data
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeMismatch(f"expected [N, K>=2] class scores, got {x.shape}")
    n, k = x.shape
    labels = np.asarray(target.data if isinstance(target, Tensor) else target)
    if labels.ndim == 2:
        if labels.shape != (n, k):
            raise ShapeMismatch(f"one-hot target {labels.shape} does not match scores {x.shape}")
        labels = labels.argmax(axis=1)
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels {labels.shape} do not match batch size {n}")
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeMismatch(f"labels out of range for {k} classes")

    m = x.max(axis=1, keepdims=True)
    shifted = x - m
    lse = m[:, 0] + np.log(np.exp(shifted).sum(axis=1))
    value = np.mean(lse - x[np.arange(n), labels])

    def backprop(gy):
        soft = np.exp(shifted)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(n), labels] -= 1.0
        return (gy * soft / n).astype(x.dtype, copy=False),

    return Tensor.result(np.asarray(value, dtype=x.dtype), (scores,), backprop, "cce_loss")
