"""Three-class lesion classifier built around component-specific enhancement.

The trunk widens early (two padded 3x3 blocks), runs a double convolution,
applies the CSFEM enhancement block, then contracts through two stride-2
stages into a spatially gated 18x18-scale map (for 64px inputs).  A low-level
branch rejoins by concatenation, the merged map is upsampled and concatenated
with the stored CSFEM output, and a final convolution feeds the dense head.

Input is a masked tumor image replicated to 3 channels; output is a
probability vector over (benign, malignant, normal).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import ops
from .attention import CSFEMBlock, SpatialGate
from .errors import ConfigError, ShapeMismatch, UnknownLayer
from .modules import BatchNorm2d, Conv2d, ConvBNAct, Dense, Dropout, Module
from .tensor import Tensor

CLASS_NAMES = ("benign", "malignant", "normal")

_BASE_WIDTHS = (512, 256, 256, 128, 128, 128, 64)


@dataclass
class ClsNetConfig:
    """Architecture knobs; tiny() divides every width by 8."""

    input_size: int = 256
    num_classes: int = 3
    width_divisor: int = 1
    dense_width: int = 128
    dropout_rate: float = 0.5
    profile: str = "custom"

    @staticmethod
    def tiny(input_size: int = 64) -> "ClsNetConfig":
        return ClsNetConfig(input_size=input_size, width_divisor=8, dense_width=16,
                            dropout_rate=0.3, profile="tiny")

    @staticmethod
    def paper() -> "ClsNetConfig":
        return ClsNetConfig(profile="paper")

    @property
    def widths(self) -> tuple:
        return tuple(max(w // self.width_divisor, 4) for w in _BASE_WIDTHS)

    def validate(self):
        if self.num_classes != 3:
            raise ConfigError(f"classifier is three-way (benign/malignant/normal), got {self.num_classes}")
        if self.input_size < 32 or self.input_size % 2 != 0:
            raise ConfigError(f"input_size must be even and >= 32, got {self.input_size}")
        if self.width_divisor < 1:
            raise ConfigError("width_divisor must be >= 1")
        if self.dense_width < self.num_classes:
            raise ConfigError("dense_width too small")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ClsNetConfig":
        return ClsNetConfig(**d)


def trace_sizes(input_size: int) -> dict:
    """Spatial sizes at the named taps, from the shape arithmetic alone."""
    wide = input_size + 4            # two k3 p2 blocks
    mid = wide // 2 + 1              # k4 p2 s2
    low = mid // 2 + 1               # k4 p2 s2
    up = 2 * low                     # bilinear 2x
    return {"wide": wide, "mid": mid, "low": low, "up": up}


class CSFECNet(Module):
    """The full classifier; forward returns per-class probabilities."""

    def __init__(self, config: ClsNetConfig, rng: np.random.Generator | None = None):
        super().__init__()
        config.validate()
        self.config = config
        if rng is None:
            rng = np.random.default_rng(0)
        w0, w1, w2, w3, w4, w5, w6 = config.widths
        self.c1 = ConvBNAct(3, w0, 3, rng, padding=2)
        self.c2 = ConvBNAct(w0, w1, 3, rng, padding=2, act="silu")
        self.d1 = ConvBNAct(w1, w2, 3, rng, padding=1)
        self.d2 = ConvBNAct(w2, w2, 3, rng, padding=1)
        self.csfem = CSFEMBlock(w2, rng)
        self.c3 = ConvBNAct(w2, w3, 4, rng, stride=2, padding=2, act="leaky_relu")
        self.c4 = ConvBNAct(w3, w4, 3, rng, padding=1, act="silu")
        self.c5 = ConvBNAct(w4, w5, 4, rng, stride=2, padding=2)
        self.c6 = ConvBNAct(w5, w6, 3, rng, padding=1)
        self.sa = SpatialGate(rng)
        self.branch_conv = Conv2d(w5, w6, 3, rng, padding=2)
        self.branch_bn = BatchNorm2d(w6)
        self.merge = ConvBNAct(2 * w6, w6, 3, rng, padding=1)
        self.reunion = ConvBNAct(w2 + w6, w6, 3, rng, padding=1)
        self.drop = Dropout(config.dropout_rate)
        sizes = trace_sizes(config.input_size)
        self.fc1 = Dense(w6 * sizes["up"] * sizes["up"], config.dense_width, rng)
        self.fc2 = Dense(config.dense_width, config.num_classes, rng)
        self.captured: dict[str, Tensor] = {}

    def _check_input(self, x: Tensor):
        n, c, h, w = x.data.shape
        if c != 3:
            raise ShapeMismatch(f"classifier expects 3 input channels, got {c}")
        if h != self.config.input_size or w != self.config.input_size:
            raise ShapeMismatch(
                f"classifier built for {self.config.input_size}px square input, got {h}x{w}")

    def forward(self, x: Tensor, capture: set[str] | None = None,
                return_scores: bool = False):
        self._check_input(x)
        cap: dict[str, Tensor] = {}
        y = self.c2(self.c1(x))
        y = self.d2(self.d1(y))
        cap["trunk"] = y
        enhanced = self.csfem(y)
        cap["csfem"] = enhanced
        y = self.c4(self.c3(enhanced))
        low = self.c5(y)
        cap["low"] = low
        y = self.c6(low)
        y = ops.mul_gate(y, self.sa(y))
        cap["sa"] = y
        side = self.branch_bn(self.branch_conv(low))
        side = ops.crop_center(side, y.data.shape[2], y.data.shape[3])
        y = self.merge(ops.concat_channels(y, side))
        cap["merge"] = y
        up_h, up_w = 2 * y.data.shape[2], 2 * y.data.shape[3]
        y = ops.resize_bilinear(y, up_h, up_w)
        pooled = ops.avgpool2d(enhanced, 2, 2)
        pooled = ops.resize_bilinear(pooled, up_h, up_w)
        y = self.reunion(ops.concat_channels(y, pooled))
        cap["reunion"] = y
        z = self.drop(ops.flatten(y))
        scores = self.fc2(ops.relu(self.fc1(z)))
        probs = ops.softmax(scores, axis=1)
        cap["probs"] = probs
        if capture is not None:
            unknown = capture - set(cap)
            if unknown:
                raise UnknownLayer(f"unknown capture layers: {sorted(unknown)}; see layer_names()")
            self.captured = {k: cap[k] for k in capture}
        else:
            self.captured = {}
        if return_scores:
            return probs, scores
        return probs

    def layer_names(self) -> list[str]:
        return ["trunk", "csfem", "low", "sa", "merge", "reunion", "probs"]

    def default_cam_layer(self) -> str:
        """Last convolutional feature map before the dense head."""
        return "reunion"

    def describe(self) -> str:
        c = self.config
        w = c.widths
        s = trace_sizes(c.input_size)
        lines = [
            f"classification network, profile={c.profile}, input 3x{c.input_size}x{c.input_size}",
            f"  widen: 3->{w[0]} (k3 p2) -> {w[1]} (k3 p2, SiLU), {s['wide']}px",
            f"  double conv: {w[1]}->{w[2]}->{w[2]} (k3 p1), {s['wide']}px",
            f"  enhancement block: spatial gate x channel gate, multi-scale 1/3/5 residual gate, {w[2]}ch",
            f"  contract: {w[2]}->{w[3]} (k4 p2 s2, LeakyReLU) -> {w[4]} (k3 p1, SiLU), {s['mid']}px",
            f"  contract: {w[4]}->{w[5]} (k4 p2 s2) -> {w[6]} (k3 p1), {s['low']}px, spatial gate",
            f"  side branch: {w[5]}->{w[6]} (k3 p2 + BN), center-cropped, concat, merge to {w[6]}ch",
            f"  reunion: 2x upsample to {s['up']}px, concat with pooled enhancement map, conv to {w[6]}ch",
            f"  head: flatten -> dropout({c.dropout_rate}) -> dense {c.dense_width} -> dense {c.num_classes}, softmax",
            f"  parameters: {self.param_count():,}",
        ]
        return "\n".join(lines)


def make_classifier_input(image: np.ndarray, mask: np.ndarray) -> Tensor:
    """Masked tumor image replicated to 3 channels, shape [3, H, W].

    The mask must be binary; the product image * mask fills every channel,
    so an all-ones mask replicates the image and an all-zeros mask yields
    a zero tensor.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    if image.ndim != 2 or mask.ndim != 2:
        raise ShapeMismatch(f"expected 2-D image and mask, got {image.shape} and {mask.shape}")
    if image.shape != mask.shape:
        raise ShapeMismatch(f"image {image.shape} and mask {mask.shape} differ")
    vals = np.unique(mask)
    if not np.all(np.isin(vals, (0, 1))):
        raise ShapeMismatch(f"mask must be binary, found values {vals[:5]}")
    masked = image * mask.astype(np.float64)
    return Tensor(np.stack([masked, masked, masked], axis=0), requires_grad=False)
