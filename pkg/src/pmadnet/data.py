"""Datasets: BUSI-layout loading, label-preserving augmentation, class
balancing, synthetic generation, and stratified splitting.

Synthetic samples draw every random number from a per-sample generator
keyed by (seed, label, index), so datasets are bit-identical across runs
and each sample's shape parameters can be re-derived independently.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass

import numpy as np

from . import imageio, imgproc
from .errors import (DegenerateCrop, EmptyClass, InvalidFractions,
                     MissingMask, ShapeMismatch)

LABELS = ("benign", "malignant", "normal")


@dataclass
class ImageSample:
    """One image/mask/label record with provenance tracking."""

    image: np.ndarray
    mask: np.ndarray
    label: str
    id: str
    provenance: str = "real"

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.image.ndim != 2:
            raise ShapeMismatch(f"sample image must be 2-D, got {self.image.shape}")
        if self.mask.shape != self.image.shape:
            raise ShapeMismatch(
                f"mask {self.mask.shape} does not match image {self.image.shape}")
        if self.label not in LABELS:
            raise ShapeMismatch(f"unknown label {self.label!r}")
        vals = np.unique(self.mask)
        if not np.all(np.isin(vals, (0, 1))):
            raise ShapeMismatch(f"mask must be binary, found values {vals[:5]}")

    @property
    def label_index(self) -> int:
        return LABELS.index(self.label)

    @property
    def parent_id(self) -> str | None:
        if self.provenance.startswith("augmented:"):
            return self.provenance.split(":", 1)[1]
        return None


# ---------------------------------------------------------------------------
# BUSI-layout loading and export

_MASK_RE = re.compile(r"_mask(_\d+)?$")


def load_busi(root: str) -> list:
    """Read a benign/malignant/normal directory tree into samples.

    Multiple mask files for one image ("_mask.png", "_mask_1.png", ...) are
    unioned pixelwise.  A missing mask is an error except for the normal
    class, where it means an all-zero mask.
    """
    samples = []
    for label in LABELS:
        folder = os.path.join(root, label)
        if not os.path.isdir(folder):
            continue
        names = sorted(os.listdir(folder))
        stems = []
        mask_files: dict[str, list] = {}
        for name in names:
            stem, ext = os.path.splitext(name)
            if ext.lower() != ".png":
                continue
            m = _MASK_RE.search(stem)
            if m:
                base = stem[: m.start()]
                mask_files.setdefault(base, []).append(name)
            else:
                stems.append(stem)

        def sort_key(stem):
            m = re.search(r"\((\d+)\)", stem)
            return (int(m.group(1)) if m else 1 << 30, stem)

        for stem in sorted(stems, key=sort_key):
            image = imageio.load_gray(os.path.join(folder, stem + ".png"))
            masks = mask_files.get(stem, [])
            if not masks:
                if label != "normal":
                    raise MissingMask(f"{label} image {stem!r} has no mask file")
                mask = np.zeros(image.shape, dtype=np.uint8)
            else:
                mask = np.zeros(image.shape, dtype=np.uint8)
                for mask_name in sorted(masks):
                    part = imageio.load_mask(os.path.join(folder, mask_name))
                    if part.shape != image.shape:
                        raise ShapeMismatch(
                            f"mask {mask_name!r} is {part.shape}, image is {image.shape}")
                    mask |= part
            samples.append(ImageSample(image, mask, label, stem, "real"))
    return samples


def export_busi(samples, root: str):
    """Write samples back out in the BUSI directory layout."""
    counters = {label: 0 for label in LABELS}
    for sample in samples:
        folder = os.path.join(root, sample.label)
        os.makedirs(folder, exist_ok=True)
        counters[sample.label] += 1
        stem = f"{sample.label} ({counters[sample.label]})"
        imageio.save_image(os.path.join(folder, stem + ".png"), sample.image)
        imageio.save_mask(os.path.join(folder, stem + "_mask.png"), sample.mask)


# ---------------------------------------------------------------------------
# Augmentation

@dataclass
class AugmentParams:
    """Label-preserving magnitude ranges for the five transforms."""

    max_rotation_deg: float = 20.0
    zoom_range: tuple = (0.9, 1.1)
    max_shear_deg: float = 10.0
    exposure_range: tuple = (0.8, 1.2)
    crop_keep: float = 0.9
    compose: bool = False


def _affine_resample(image: np.ndarray, mask: np.ndarray, inv: np.ndarray):
    """Warp by the inverse-map matrix about the image center.

    inv maps output pixel offsets (di, dj) to source offsets.  The image is
    sampled bilinearly, the mask by nearest neighbor; both fill 0 outside.
    """
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    di, dj = ii - cy, jj - cx
    si = inv[0, 0] * di + inv[0, 1] * dj + cy
    sj = inv[1, 0] * di + inv[1, 1] * dj + cx

    i0 = np.floor(si).astype(np.int64)
    j0 = np.floor(sj).astype(np.int64)
    fi = si - i0
    fj = sj - j0

    def gather(img, yi, xj):
        inside = (yi >= 0) & (yi < h) & (xj >= 0) & (xj < w)
        vals = img[np.clip(yi, 0, h - 1), np.clip(xj, 0, w - 1)]
        return np.where(inside, vals, 0.0)

    out_img = ((1 - fi) * (1 - fj) * gather(image, i0, j0)
               + (1 - fi) * fj * gather(image, i0, j0 + 1)
               + fi * (1 - fj) * gather(image, i0 + 1, j0)
               + fi * fj * gather(image, i0 + 1, j0 + 1))

    ni = np.rint(si).astype(np.int64)
    nj = np.rint(sj).astype(np.int64)
    inside = (ni >= 0) & (ni < h) & (nj >= 0) & (nj < w)
    out_mask = np.where(inside,
                        mask[np.clip(ni, 0, h - 1), np.clip(nj, 0, w - 1)],
                        0).astype(np.uint8)
    return out_img, out_mask


def _derive(sample: ImageSample, image, mask, tag: str) -> ImageSample:
    return ImageSample(np.clip(image, 0.0, 1.0), mask, sample.label,
                       f"{sample.id}#{tag}", f"augmented:{sample.id}")


def rotate_sample(sample: ImageSample, degrees: float) -> ImageSample:
    t = np.deg2rad(degrees)
    inv = np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])
    img, mask = _affine_resample(sample.image, sample.mask, inv)
    return _derive(sample, img, mask, f"rot{degrees:g}")


def zoom_sample(sample: ImageSample, factor: float) -> ImageSample:
    if factor <= 0:
        raise DegenerateCrop(f"zoom factor must be positive, got {factor}")
    inv = np.array([[1.0 / factor, 0.0], [0.0, 1.0 / factor]])
    img, mask = _affine_resample(sample.image, sample.mask, inv)
    return _derive(sample, img, mask, f"zoom{factor:g}")


def shear_sample(sample: ImageSample, degrees: float) -> ImageSample:
    t = np.tan(np.deg2rad(degrees))
    inv = np.array([[1.0, 0.0], [-t, 1.0]])
    img, mask = _affine_resample(sample.image, sample.mask, inv)
    return _derive(sample, img, mask, f"shear{degrees:g}")


def expose_sample(sample: ImageSample, gamma: float) -> ImageSample:
    img = imgproc.gamma_correct(sample.image, gamma)
    return _derive(sample, img, sample.mask.copy(), f"exp{gamma:g}")


def crop_sample(sample: ImageSample, top: int, left: int,
                height: int, width: int) -> ImageSample:
    h, w = sample.image.shape
    if height < 1 or width < 1:
        raise DegenerateCrop(f"crop window {height}x{width} is empty")
    if top < 0 or left < 0 or top + height > h or left + width > w:
        raise DegenerateCrop(
            f"crop [{top}:{top + height}, {left}:{left + width}] exceeds {h}x{w}")
    img = sample.image[top:top + height, left:left + width]
    mask = sample.mask[top:top + height, left:left + width]
    img = imgproc.resize_bilinear(img, h, w)
    mask = imgproc.resize_nearest(mask, h, w).astype(np.uint8)
    return _derive(sample, img, mask, f"crop{top},{left},{height},{width}")


def _random_crop(sample: ImageSample, rng, keep: float) -> ImageSample:
    h, w = sample.image.shape
    frac = np.sqrt(rng.uniform(keep, 1.0))
    ch, cw = max(int(round(h * frac)), 1), max(int(round(w * frac)), 1)
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return crop_sample(sample, top, left, ch, cw)


def augment(sample: ImageSample, rng: np.random.Generator,
            params: AugmentParams | None = None) -> ImageSample:
    """One random transform (or a composition of all five when configured),
    applied identically to image and mask; exposure touches only the image.
    """
    p = params or AugmentParams()
    moves = [
        lambda s: rotate_sample(s, rng.uniform(-p.max_rotation_deg, p.max_rotation_deg)),
        lambda s: zoom_sample(s, rng.uniform(*p.zoom_range)),
        lambda s: shear_sample(s, rng.uniform(-p.max_shear_deg, p.max_shear_deg)),
        lambda s: expose_sample(s, rng.uniform(*p.exposure_range)),
        lambda s: _random_crop(s, rng, p.crop_keep),
    ]
    if p.compose:
        out = sample
        for move in moves:
            out = move(out)
    else:
        out = moves[int(rng.integers(len(moves)))](sample)
    return ImageSample(out.image, out.mask, sample.label,
                       out.id, f"augmented:{sample.id}")


def balance_classes(samples, rng: np.random.Generator,
                    params: AugmentParams | None = None) -> list:
    """Augment minority classes until every class matches the majority count.

    Originals are kept untouched; additions carry augmented provenance.
    """
    by_label = {label: [s for s in samples if s.label == label] for label in LABELS}
    for label, group in by_label.items():
        if not group:
            raise EmptyClass(f"no {label} samples to balance from")
    target = max(len(g) for g in by_label.values())
    out = list(samples)
    for label in LABELS:
        group = by_label[label]
        need = target - len(group)
        for k in range(need):
            parent = group[int(rng.integers(len(group)))]
            child = augment(parent, rng, params)
            child.id = f"{parent.id}#bal{k}"
            out.append(child)
    return out


# ---------------------------------------------------------------------------
# Synthetic generation

def synth_rng(seed: int, label: str, index: int) -> np.random.Generator:
    """Per-sample generator; the key is hashed so samples are independent."""
    digest = hashlib.blake2b(f"{seed}:{label}:{index}".encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def draw_ellipse_params(rng: np.random.Generator, size: int) -> dict:
    """Center, semi-axes, and edge softness for a benign lesion."""
    return {
        "cy": rng.uniform(0.35, 0.65) * size,
        "cx": rng.uniform(0.35, 0.65) * size,
        "a": rng.uniform(0.12, 0.22) * size,
        "b": rng.uniform(0.12, 0.22) * size,
        "edge": rng.uniform(1.5, 3.0),
    }


def draw_star_params(rng: np.random.Generator, size: int) -> dict:
    """Center, base radius, and radial spike pattern for a malignant lesion."""
    lobes = int(rng.integers(5, 10))
    return {
        "cy": rng.uniform(0.35, 0.65) * size,
        "cx": rng.uniform(0.35, 0.65) * size,
        "r": rng.uniform(0.12, 0.2) * size,
        "amp": rng.uniform(0.3, 0.45),
        "lobes": lobes,
        "phases": rng.uniform(0.0, 2 * np.pi, size=2),
    }


def ellipse_mask(size: int, cy: float, cx: float, a: float, b: float,
                 **_ignored) -> np.ndarray:
    jj, ii = np.meshgrid(np.arange(size), np.arange(size))
    inside = ((ii - cy) / a) ** 2 + ((jj - cx) / b) ** 2 <= 1.0
    return inside.astype(np.uint8)


def star_mask(size: int, cy: float, cx: float, r: float, amp: float,
              lobes: int, phases: np.ndarray, **_ignored) -> np.ndarray:
    jj, ii = np.meshgrid(np.arange(size), np.arange(size))
    dy, dx = ii - cy, jj - cx
    dist = np.hypot(dy, dx)
    ang = np.arctan2(dy, dx)
    radius = r * (1.0 + amp * (0.6 * np.sin(lobes * ang + phases[0])
                               + 0.4 * np.sin((lobes + 2) * ang + phases[1])))
    return (dist <= radius).astype(np.uint8)


def _speckle_background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smoothed multiplicative-noise field in roughly [0.1, 0.5]."""
    raw = rng.standard_normal((size, size))
    smooth = imgproc.gaussian_filter(raw, sigma=1.2, size=5)
    grain = rng.rayleigh(scale=0.55, size=(size, size))
    field = (0.28 + 0.06 * smooth) * grain
    return np.clip(field, 0.0, 1.0)


def _soft_interior(size: int, mask: np.ndarray, edge: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Lesion brightness: brighter interior with a blurred boundary."""
    soft = imgproc.gaussian_filter(mask.astype(np.float64), sigma=edge,
                                   size=2 * int(np.ceil(2 * edge)) + 1)
    gain = rng.uniform(0.35, 0.5)
    return gain * soft


def synth_generate(n_per_class: int, size: int = 64, seed: int = 0) -> list:
    """Deterministic three-class dataset with analytically exact masks."""
    if size < 32:
        raise ShapeMismatch(f"synthetic size must be >= 32, got {size}")
    samples = []
    for label in LABELS:
        for i in range(n_per_class):
            rng = synth_rng(seed, label, i)
            if label == "benign":
                params = draw_ellipse_params(rng, size)
                mask = ellipse_mask(size, **params)
                image = _speckle_background(rng, size) + _soft_interior(
                    size, mask, params["edge"], rng)
            elif label == "malignant":
                params = draw_star_params(rng, size)
                mask = star_mask(size, **params)
                image = _speckle_background(rng, size) + _soft_interior(
                    size, mask, 1.0, rng)
            else:
                mask = np.zeros((size, size), dtype=np.uint8)
                image = _speckle_background(rng, size)
            samples.append(ImageSample(np.clip(image, 0.0, 1.0), mask, label,
                                       f"{label}-{i:04d}", "synthetic"))
    return samples


# ---------------------------------------------------------------------------
# Splitting

@dataclass
class DatasetSplit:
    train: list
    validation: list
    seed: int
    fractions: tuple

    def check(self):
        train_ids = {s.id for s in self.train}
        val_ids = {s.id for s in self.validation}
        if train_ids & val_ids:
            raise ShapeMismatch("split shares ids between train and validation")
        if any(s.parent_id for s in self.validation):
            raise ShapeMismatch("augmented sample leaked into validation")
        return self


def split(samples, fractions: tuple = (0.8, 0.2), seed: int = 0) -> DatasetSplit:
    """Stratified, deterministic split; augmented samples go to train only,
    and are dropped entirely when their parent lands in validation.
    """
    if len(fractions) != 2 or any(f < 0 for f in fractions) \
            or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidFractions(f"fractions must be two nonnegative values summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    originals = [s for s in samples if s.parent_id is None]
    children = [s for s in samples if s.parent_id is not None]
    train, validation = [], []
    for label in LABELS:
        group = [s for s in originals if s.label == label]
        order = rng.permutation(len(group))
        n_train = int(round(len(group) * fractions[0]))
        for rank, idx in enumerate(order):
            (train if rank < n_train else validation).append(group[idx])
    val_ids = {s.id for s in validation}
    train.extend(c for c in children if c.parent_id not in val_ids)
    return DatasetSplit(train, validation, seed, tuple(fractions)).check()


def preprocess_sample(sample: ImageSample, cfg: imgproc.PreprocessConfig) -> ImageSample:
    """Run the image pipeline and resize the mask to match (nearest)."""
    image = imgproc.preprocess(sample.image, cfg)
    mask = imgproc.resize_nearest(sample.mask, cfg.target_h, cfg.target_w)
    return ImageSample(image, mask.astype(np.uint8), sample.label,
                       sample.id, sample.provenance)
