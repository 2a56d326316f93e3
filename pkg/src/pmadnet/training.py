"""Training loops, plain-SGD optimizer, plateau schedule, checkpoints.

Both loops follow the same scheme: shuffled mini-batches, forward, loss,
backward, SGD update; after each epoch the validation set is scored in eval
mode and the learning rate is decayed when the validation loss plateaus.
All randomness flows from the config seed, so a fixed seed reproduces the
run bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import ops
from .clsnet import CLASS_NAMES, ClsNetConfig, CSFECNet, make_classifier_input
from .errors import (CheckpointError, ConfigError, CorruptCheckpoint,
                     MissingGradient, VersionMismatch)
from .losses import cce_loss, focal_loss, jaccard_loss, total_seg_loss
from .metrics import ConfusionMatrix, MetricsReport, cls_metrics, seg_metrics
from .modules import Dropout
from .segnet import PMADLinkNet, SegNetConfig
from .tensor import Tensor

CHECKPOINT_MAGIC = b"PMADCKPT"
CHECKPOINT_VERSION = 1
LR_FLOOR = 1e-6


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    min_improvement: float = 1e-4
    include_dice: bool = False
    focal_gamma: float = 2.0
    float32: bool = True

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError(f"plateau_factor must lie in (0,1), got {self.plateau_factor}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


def sgd_step(params, lr: float):
    """theta <- theta - lr * grad for every parameter; grads then cleared."""
    items = params.items() if isinstance(params, dict) else enumerate(params)
    for name, p in items:
        if p.grad is None:
            raise MissingGradient(f"parameter {name} has no gradient")
        p.data -= np.asarray(lr * p.grad, dtype=p.data.dtype)
        p.grad = None


def plateau_lr(history, lr: float, cfg: TrainConfig) -> float:
    """Decay lr by plateau_factor when the newest entry completes a full
    patience window without a min_improvement gain on the best loss seen.

    Designed to be called once per epoch with the growing history; floored
    at 1e-6 and monotone nonincreasing.
    """
    if not len(history):
        raise ConfigError("plateau_lr needs at least one recorded loss")
    best = history[0]
    stale = 0
    fired = False
    for value in history[1:]:
        fired = False
        if value < best - cfg.min_improvement:
            best = value
            stale = 0
        else:
            stale += 1
            fired = stale % cfg.plateau_patience == 0
    if fired:
        lr = lr * cfg.plateau_factor
    return max(lr, LR_FLOOR)


def _reseed_dropout(model, seed: int):
    for i, mod in enumerate(model.modules()):
        if isinstance(mod, Dropout):
            mod.reseed(seed + 7919 * (i + 1))


def _chunks(order, size):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def _seg_arrays(samples, dtype):
    images = np.stack([s.image for s in samples]).astype(dtype)[:, None]
    masks = np.stack([s.mask for s in samples])
    onehot = np.stack([(masks == 0), (masks == 1)], axis=1).astype(dtype)
    return images, onehot, masks


def _cls_arrays(samples, dtype):
    stacked = np.stack([make_classifier_input(s.image, s.mask).data for s in samples])
    labels = np.array([s.label_index for s in samples], dtype=np.int64)
    return stacked.astype(dtype), labels


def evaluate_segmentation(model, samples, cfg: TrainConfig) -> MetricsReport:
    """Eval-mode pass: mean per-sample mask metrics, mean losses, and the
    aggregate background/foreground pixel confusion."""
    dtype = np.float32 if cfg.float32 else np.float64
    model.eval()
    accs, ious, dices = [], [], []
    focal_sum = jaccard_sum = total_sum = 0.0
    n_seen = 0
    pixel_counts = np.zeros((2, 2), dtype=np.int64)
    for batch in _chunks(list(range(len(samples))), cfg.batch_size):
        part = [samples[i] for i in batch]
        x, onehot, masks = _seg_arrays(part, dtype)
        probs = model.forward(Tensor(x, requires_grad=False))
        f = float(focal_loss(probs, onehot, cfg.focal_gamma).data)
        j = float(jaccard_loss(probs, onehot).data)
        t = float(total_seg_loss(probs, onehot, cfg.focal_gamma, cfg.include_dice).data)
        focal_sum += f * len(part)
        jaccard_sum += j * len(part)
        total_sum += t * len(part)
        n_seen += len(part)
        pred = probs.data.argmax(axis=1).astype(np.uint8)
        for k in range(len(part)):
            a, i_, d = seg_metrics(pred[k], masks[k])
            accs.append(a)
            ious.append(i_)
            dices.append(d)
            np.add.at(pixel_counts, (masks[k].ravel(), pred[k].ravel()), 1)
    confusion = ConfusionMatrix(pixel_counts, ("background", "foreground"))
    return MetricsReport(
        dice=float(np.mean(dices)), iou=float(np.mean(ious)),
        pixel_accuracy=float(np.mean(accs)),
        loss_focal=focal_sum / n_seen, loss_jaccard=jaccard_sum / n_seen,
        loss_total=total_sum / n_seen, confusion=confusion)


def evaluate_classifier(model, samples, cfg: TrainConfig) -> MetricsReport:
    """Eval-mode pass: micro-averaged scores plus the 3x3 confusion."""
    dtype = np.float32 if cfg.float32 else np.float64
    model.eval()
    loss_sum = 0.0
    y_true, y_pred = [], []
    for batch in _chunks(list(range(len(samples))), cfg.batch_size):
        part = [samples[i] for i in batch]
        x, labels = _cls_arrays(part, dtype)
        probs, scores = model.forward(Tensor(x, requires_grad=False), return_scores=True)
        loss_sum += float(cce_loss(scores, labels).data) * len(part)
        y_true.extend(labels.tolist())
        y_pred.extend(probs.data.argmax(axis=1).tolist())
    confusion = ConfusionMatrix.from_predictions(y_true, y_pred, CLASS_NAMES)
    accuracy, precision, recall, f1 = cls_metrics(confusion)
    return MetricsReport(
        cls_accuracy=accuracy, precision=precision, recall=recall, f1=f1,
        loss_total=loss_sum / len(samples), confusion=confusion)


def _train_loop(model, split, cfg: TrainConfig, step_fn, eval_fn, on_epoch_end):
    cfg.validate()
    dtype = np.float32 if cfg.float32 else np.float64
    model.astype(dtype)
    _reseed_dropout(model, cfg.seed)
    reports = []
    val_losses = []
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(split.train))
        model.train()
        for batch in _chunks(order, cfg.batch_size):
            part = [split.train[i] for i in batch]
            loss = step_fn(model, part, dtype)
            model.zero_grad()
            loss.backward()
            sgd_step(model.named_parameters(), lr)
        report = eval_fn(model, split.validation, cfg) if split.validation \
            else eval_fn(model, split.train, cfg)
        reports.append(report)
        val_losses.append(report.loss_total)
        lr = plateau_lr(val_losses, lr, cfg)
        if on_epoch_end is not None and on_epoch_end(epoch, report):
            break
    return model, reports


def train_segmentation(model, split, cfg: TrainConfig, on_epoch_end=None):
    """Mini-batch SGD on the combined focal/overlap loss."""

    def step(model, part, dtype):
        x, onehot, _ = _seg_arrays(part, dtype)
        probs = model.forward(Tensor(x, requires_grad=False))
        return total_seg_loss(probs, onehot, cfg.focal_gamma, cfg.include_dice)

    return _train_loop(model, split, cfg, step, evaluate_segmentation, on_epoch_end)


def train_classifier(model, split, cfg: TrainConfig, on_epoch_end=None):
    """Mini-batch SGD on cross-entropy over class scores."""

    def step(model, part, dtype):
        x, labels = _cls_arrays(part, dtype)
        _, scores = model.forward(Tensor(x, requires_grad=False), return_scores=True)
        return cce_loss(scores, labels)

    return _train_loop(model, split, cfg, step, evaluate_classifier, on_epoch_end)


# ---------------------------------------------------------------------------
# Checkpoints

def _model_kind(model) -> str:
    if isinstance(model, PMADLinkNet):
        return "segmentation"
    if isinstance(model, CSFECNet):
        return "classification"
    raise CheckpointError(f"cannot checkpoint a {type(model).__name__}")


def save_checkpoint(model, state: dict, path: str):
    """Binary format: magic, version, header length, JSON header, float32
    little-endian payload (parameters then buffers, header order), then an
    8-byte digest of the payload."""
    params = model.named_parameters()
    buffers = model.named_buffers()
    header = {
        "kind": _model_kind(model),
        "config": model.config.to_dict(),
        "dtype": "float32",
        "params": [[name, list(params[name].data.shape)] for name in params],
        "buffers": [[name, list(buffers[name].shape)] for name in buffers],
        "state": state,
    }
    chunks = [np.ascontiguousarray(params[name].data, dtype="<f4").tobytes()
              for name in params]
    chunks += [np.ascontiguousarray(buffers[name], dtype="<f4").tobytes()
               for name in buffers]
    payload = b"".join(chunks)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    blob = (CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(head))
            + head + payload + digest)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str):
    """Rebuild the model named in the header and restore every array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 12 or not blob.startswith(CHECKPOINT_MAGIC):
        raise CorruptCheckpoint(f"{path} is not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    version, head_len = struct.unpack_from("<IQ", blob, off)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    off += 12
    if len(blob) < off + head_len + 8:
        raise CorruptCheckpoint(f"{path} is truncated")
    try:
        header = json.loads(blob[off:off + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path} has an unreadable header: {exc}") from exc
    payload = blob[off + head_len:-8]
    if hashlib.blake2b(payload, digest_size=8).digest() != blob[-8:]:
        raise CorruptCheckpoint(f"{path} failed its payload checksum")
    if header.get("dtype", "float32") != "float32":
        raise VersionMismatch(f"unsupported payload dtype {header['dtype']!r}")

    if header["kind"] == "segmentation":
        model = PMADLinkNet(SegNetConfig.from_dict(header["config"]))
    elif header["kind"] == "classification":
        model = CSFECNet(ClsNetConfig.from_dict(header["config"]))
    else:
        raise CorruptCheckpoint(f"unknown model kind {header['kind']!r}")
    model.astype(np.float32)

    params = model.named_parameters()
    buffers = model.named_buffers()
    cursor = 0

    def take(shape):
        nonlocal cursor
        count = int(np.prod(shape)) if shape else 1
        end = cursor + 4 * count
        if end > len(payload):
            raise CorruptCheckpoint(f"{path} payload shorter than its header claims")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=cursor)
        cursor = end
        return arr.reshape(shape)

    for name, shape in header["params"]:
        if name not in params or list(params[name].data.shape) != shape:
            raise CorruptCheckpoint(f"parameter {name} does not fit the rebuilt model")
        params[name].data = take(shape).astype(np.float32)
    for name, shape in header["buffers"]:
        if name not in buffers or list(buffers[name].shape) != shape:
            raise CorruptCheckpoint(f"buffer {name} does not fit the rebuilt model")
        np.copyto(buffers[name], take(shape).astype(np.float32))
    if cursor != len(payload):
        raise CorruptCheckpoint(f"{path} payload longer than its header claims")
    return model, header["state"]
