"""Encoder-decoder segmentation network with precision-mapping attention.

Encoder: a downsampling stem (4x) feeding three stages of residual
inception blocks (kinds A, B, C) separated by two reduction blocks, for a
total 16x contraction.  Decoder: four upsampling blocks, each ending in a
precision-mapping module (PMM) and a spatial-channel attention gate (SCA),
joined to the encoder by additive skip links through bias-free 1x1
projections.  The head restores the class map at input resolution and
applies softmax over classes.

All shapes assume input [N, in_ch, H, W] with H and W divisible by 16.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import ops
from .attention import PMMBlock, SCABlock
from .errors import ConfigError, ShapeMismatch, UnknownLayer
from .modules import BatchNorm2d, Conv2d, ConvBNAct, Module, TConv2d
from .tensor import Tensor


@dataclass
class SegNetConfig:
    """Architecture knobs; tiny() fits CPU budgets, paper() is full scale."""

    input_size: int = 256
    in_channels: int = 1
    num_classes: int = 2
    base_channels: int = 32
    blocks: tuple = (5, 10, 5)
    dropout_rate: float = 0.3
    profile: str = "custom"

    @staticmethod
    def tiny(input_size: int = 64) -> "SegNetConfig":
        return SegNetConfig(input_size=input_size, base_channels=8, blocks=(2, 2, 2),
                            dropout_rate=0.2, profile="tiny")

    @staticmethod
    def paper() -> "SegNetConfig":
        return SegNetConfig(profile="paper")

    @property
    def stage_channels(self) -> tuple:
        """Widths of the four encoder stages: stem output, block-A stage,
        block-B stage, block-C stage."""
        b = self.base_channels
        return (4 * b, 4 * b, 8 * b, 16 * b)

    def validate(self):
        if self.input_size % 16 != 0 or self.input_size < 16:
            raise ConfigError(f"input_size must be a positive multiple of 16, got {self.input_size}")
        if self.base_channels < 4 or self.base_channels % 4 != 0:
            raise ConfigError(f"base_channels must be a multiple of 4 >= 4, got {self.base_channels}")
        if len(self.blocks) != 3 or any(n < 1 for n in self.blocks):
            raise ConfigError(f"blocks must be three positive counts, got {self.blocks}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = list(self.blocks)
        return d

    @staticmethod
    def from_dict(d: dict) -> "SegNetConfig":
        d = dict(d)
        d["blocks"] = tuple(d["blocks"])
        return SegNetConfig(**d)


class Stem(Module):
    """Input -> H/4 with two filter concatenations; keeps an H/2 tap."""

    def __init__(self, in_ch: int, b: int, rng):
        super().__init__()
        self.conv1 = ConvBNAct(in_ch, b, 3, rng, stride=2, padding=1)
        self.conv2 = ConvBNAct(b, b, 3, rng, padding=1)
        self.conv3 = ConvBNAct(b, b, 3, rng, padding=1)
        self.down_conv = ConvBNAct(b, b, 3, rng, stride=2, padding=1)
        self.mix_a1 = ConvBNAct(2 * b, b, 1, rng)
        self.mix_a2 = ConvBNAct(b, b, 3, rng, padding=1)
        self.mix_b1 = ConvBNAct(2 * b, b, 1, rng)
        self.mix_b2 = ConvBNAct(b, b, 3, rng, padding=1)
        self.mix_b3 = ConvBNAct(b, b, 3, rng, padding=1)
        self.out_a = ConvBNAct(2 * b, 2 * b, 3, rng, padding=1)
        self.out_b = ConvBNAct(2 * b, 2 * b, 1, rng)

    def forward(self, x: Tensor):
        mid = self.conv3(self.conv2(self.conv1(x)))  # [b, H/2]
        down = ops.concat_channels(ops.maxpool2d(mid, 2, 2), self.down_conv(mid))  # [2b, H/4]
        mixed = ops.concat_channels(
            self.mix_a2(self.mix_a1(down)),
            self.mix_b3(self.mix_b2(self.mix_b1(down))),
        )  # [2b, H/4]
        out = ops.concat_channels(self.out_a(mixed), self.out_b(mixed))  # [4b, H/4]
        return mid, out


class InceptionBlock(Module):
    """Residual block with parallel branches; shape and width preserving.

    kind A: 1x1 | 1x1-3x3 | 1x1-3x3-3x3
    kind B: 1x1 | 1x1-1x7-7x1
    kind C: 1x1 | 1x1-1x3-3x1
    Branch outputs are concatenated, merged by a linear 1x1 convolution,
    added to the input, and passed through ReLU.
    """

    def __init__(self, kind: str, ch: int, rng):
        super().__init__()
        if kind not in ("A", "B", "C"):
            raise ConfigError(f"inception block kind must be A, B, or C, got {kind!r}")
        self.kind = kind
        h = max(ch // 4, 4)
        self.b0 = ConvBNAct(ch, h, 1, rng)
        if kind == "A":
            self.b1a = ConvBNAct(ch, h, 1, rng)
            self.b1b = ConvBNAct(h, h, 3, rng, padding=1)
            self.b2a = ConvBNAct(ch, h, 1, rng)
            self.b2b = ConvBNAct(h, h, 3, rng, padding=1)
            self.b2c = ConvBNAct(h, h, 3, rng, padding=1)
            merged = 3 * h
        elif kind == "B":
            self.b1a = ConvBNAct(ch, h, 1, rng)
            self.b1b = ConvBNAct(h, h, (1, 7), rng, padding=(0, 3))
            self.b1c = ConvBNAct(h, h, (7, 1), rng, padding=(3, 0))
            merged = 2 * h
        else:
            self.b1a = ConvBNAct(ch, h, 1, rng)
            self.b1b = ConvBNAct(h, h, (1, 3), rng, padding=(0, 1))
            self.b1c = ConvBNAct(h, h, (3, 1), rng, padding=(1, 0))
            merged = 2 * h
        # Linear merge back to the trunk width (bias, no BN, no activation).
        self.merge = Conv2d(merged, ch, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        if self.kind == "A":
            branches = (self.b0(x), self.b1b(self.b1a(x)), self.b2c(self.b2b(self.b2a(x))))
        else:
            branches = (self.b0(x), self.b1c(self.b1b(self.b1a(x))))
        y = self.merge(ops.concat_channels(*branches))
        return ops.relu(ops.add(x, y))


class ReductionA(Module):
    """H -> H/2, c1 -> c2: maxpool | strided 3x3 | 1x1-3x3-strided 3x3."""

    def __init__(self, c_in: int, c_out: int, rng):
        super().__init__()
        grow = c_out - c_in
        if grow <= 0 or grow % 2 != 0:
            raise ConfigError(f"reduction A needs even positive growth, got {c_in}->{c_out}")
        n = grow // 2
        h = max(c_in // 4, 4)
        self.p1 = ConvBNAct(c_in, n, 3, rng, stride=2, padding=1)
        self.p2a = ConvBNAct(c_in, h, 1, rng)
        self.p2b = ConvBNAct(h, h, 3, rng, padding=1)
        self.p2c = ConvBNAct(h, n, 3, rng, stride=2, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return ops.concat_channels(ops.maxpool2d(x, 2, 2), self.p1(x), self.p2c(self.p2b(self.p2a(x))))


class ReductionB(Module):
    """H -> H/2, c2 -> c3: maxpool plus three convolutional paths."""

    def __init__(self, c_in: int, c_out: int, rng):
        super().__init__()
        grow = c_out - c_in
        if grow <= 0 or grow % 4 != 0:
            raise ConfigError(f"reduction B needs growth divisible by 4, got {c_in}->{c_out}")
        n_half, n_quarter = grow // 2, grow // 4
        h = max(c_in // 4, 4)
        self.p1a = ConvBNAct(c_in, h, 1, rng)
        self.p1b = ConvBNAct(h, n_half, 3, rng, stride=2, padding=1)
        self.p2a = ConvBNAct(c_in, h, 1, rng)
        self.p2b = ConvBNAct(h, n_quarter, 3, rng, stride=2, padding=1)
        self.p3a = ConvBNAct(c_in, h, 1, rng)
        self.p3b = ConvBNAct(h, h, 3, rng, padding=1)
        self.p3c = ConvBNAct(h, n_quarter, 3, rng, stride=2, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        return ops.concat_channels(
            ops.maxpool2d(x, 2, 2),
            self.p1b(self.p1a(x)),
            self.p2b(self.p2a(x)),
            self.p3c(self.p3b(self.p3a(x))),
        )


class DecoderBlock(Module):
    """conv -> tconv 2x up -> PMM -> SCA, then the additive skip joins.

    The skip enters through a bias-free 1x1 projection so a zero skip
    contributes exactly zero.
    """

    def __init__(self, in_ch: int, out_ch: int, skip_ch: int, rng, dropout_rate: float):
        super().__init__()
        self.conv = ConvBNAct(in_ch, out_ch, 3, rng, padding=1)
        self.up = TConv2d(out_ch, out_ch, 2, rng, stride=2)
        self.up_bn = BatchNorm2d(out_ch)
        self.pmm = PMMBlock(out_ch, rng, dropout_rate)
        self.sca = SCABlock(out_ch, rng)
        self.skip_proj = Conv2d(skip_ch, out_ch, 1, rng, bias=False)
        self.captured: dict[str, Tensor] = {}

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        y = ops.relu(self.up_bn(self.up(self.conv(x))))
        y = self.pmm(y)
        self.captured = {"pmm": y}
        y = self.sca(y)
        self.captured["sca"] = y
        return ops.add(y, self.skip_proj(skip))


class SegHead(Module):
    """Stride-1 transposed conv, two convs, softmax over classes."""

    def __init__(self, ch: int, num_classes: int, rng):
        super().__init__()
        self.tconv = TConv2d(ch, ch, 3, rng, stride=1, padding=1)
        self.bn1 = BatchNorm2d(ch)
        self.conv1 = ConvBNAct(ch, ch, 3, rng, padding=1)
        self.conv2 = Conv2d(ch, num_classes, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        y = ops.relu(self.bn1(self.tconv(x)))
        scores = self.conv2(self.conv1(y))
        return ops.softmax(scores, axis=1)


class PMADLinkNet(Module):
    """The full segmentation model; forward returns per-class probabilities."""

    def __init__(self, config: SegNetConfig, rng: np.random.Generator | None = None):
        super().__init__()
        config.validate()
        self.config = config
        if rng is None:
            rng = np.random.default_rng(0)
        b = config.base_channels
        c0, c1, c2, c3 = b, 4 * b, 8 * b, 16 * b
        na, nb, nc = config.blocks
        self.stem = Stem(config.in_channels, b, rng)
        for i in range(na):
            setattr(self, f"enc_a{i}", InceptionBlock("A", c1, rng))
        self.red_a = ReductionA(c1, c2, rng)
        for i in range(nb):
            setattr(self, f"enc_b{i}", InceptionBlock("B", c2, rng))
        self.red_b = ReductionB(c2, c3, rng)
        for i in range(nc):
            setattr(self, f"enc_c{i}", InceptionBlock("C", c3, rng))
        dr = config.dropout_rate
        self.dec1 = DecoderBlock(c3, c2, skip_ch=c2, rng=rng, dropout_rate=dr)
        self.dec2 = DecoderBlock(c2, c1, skip_ch=c1, rng=rng, dropout_rate=dr)
        self.dec3 = DecoderBlock(c1, 2 * c0, skip_ch=c0, rng=rng, dropout_rate=dr)
        self.dec4 = DecoderBlock(2 * c0, 2 * c0, skip_ch=config.in_channels, rng=rng, dropout_rate=dr)
        self.head = SegHead(2 * c0, config.num_classes, rng)
        self.captured: dict[str, Tensor] = {}

    def _check_input(self, x: Tensor):
        n, c, h, w = x.data.shape
        if c != self.config.in_channels:
            raise ShapeMismatch(f"expected {self.config.in_channels} input channels, got {c}")
        if h % 16 != 0 or w % 16 != 0 or h < 16 or w < 16:
            raise ShapeMismatch(f"input dims must be multiples of 16, got {h}x{w}")

    def forward(self, x: Tensor, capture: set[str] | None = None) -> Tensor:
        self._check_input(x)
        cap: dict[str, Tensor] = {}
        na, nb, nc = self.config.blocks
        mid, y = self.stem(x)
        cap["stem.mid"], cap["stem.out"] = mid, y
        for i in range(na):
            y = getattr(self, f"enc_a{i}")(y)
        a_out = y
        cap["enc_a"] = a_out
        y = self.red_a(y)
        cap["red_a"] = y
        for i in range(nb):
            y = getattr(self, f"enc_b{i}")(y)
        b_out = y
        cap["enc_b"] = b_out
        y = self.red_b(y)
        cap["red_b"] = y
        for i in range(nc):
            y = getattr(self, f"enc_c{i}")(y)
        cap["enc_c"] = y
        y = self.dec1(y, b_out)
        cap.update({"dec1": y, "dec1.pmm": self.dec1.captured["pmm"], "dec1.sca": self.dec1.captured["sca"]})
        y = self.dec2(y, a_out)
        cap.update({"dec2": y, "dec2.pmm": self.dec2.captured["pmm"], "dec2.sca": self.dec2.captured["sca"]})
        y = self.dec3(y, mid)
        cap.update({"dec3": y, "dec3.pmm": self.dec3.captured["pmm"], "dec3.sca": self.dec3.captured["sca"]})
        y = self.dec4(y, x)
        cap.update({"dec4": y, "dec4.pmm": self.dec4.captured["pmm"], "dec4.sca": self.dec4.captured["sca"]})
        probs = self.head(y)
        cap["probs"] = probs
        if capture is not None:
            unknown = capture - set(cap)
            if unknown:
                raise UnknownLayer(f"unknown capture layers: {sorted(unknown)}; see layer_names()")
            self.captured = {k: cap[k] for k in capture}
        else:
            self.captured = {}
        return probs

    def layer_names(self) -> list[str]:
        names = ["stem.mid", "stem.out", "enc_a", "red_a", "enc_b", "red_b", "enc_c"]
        for i in (1, 2, 3, 4):
            names += [f"dec{i}", f"dec{i}.pmm", f"dec{i}.sca"]
        return names + ["probs"]

    def default_cam_layer(self) -> str:
        """Topmost decoder attention output (full resolution)."""
        return "dec4.sca"

    def describe(self) -> str:
        c = self.config
        b = c.base_channels
        c0, c1, c2, c3 = b, 4 * b, 8 * b, 16 * b
        s = c.input_size
        lines = [
            f"segmentation network, profile={c.profile}, input {c.in_channels}x{s}x{s}",
            f"  stem: {c.in_channels}->{c0} at {s}//2, filter-concat down to {c1} at {s}//4 (tap: {c0} at {s}//2)",
            f"  encoder A: {c.blocks[0]} residual inception blocks (1x1 | 1x1-3x3 | 1x1-3x3-3x3) at {c1}ch, {s // 4}px",
            f"  reduction A: {c1}->{c2}, {s // 4}->{s // 8}px (maxpool | strided conv | factorized path)",
            f"  encoder B: {c.blocks[1]} residual inception blocks (1x1 | 1x1-1x7-7x1) at {c2}ch, {s // 8}px",
            f"  reduction B: {c2}->{c3}, {s // 8}->{s // 16}px (maxpool + three conv paths)",
            f"  encoder C: {c.blocks[2]} residual inception blocks (1x1 | 1x1-1x3-3x1) at {c3}ch, {s // 16}px",
            f"  dec1: {c3}->{c2}, up to {s // 8}px, PMM+SCA, additive skip from encoder B ({c2}ch)",
            f"  dec2: {c2}->{c1}, up to {s // 4}px, PMM+SCA, additive skip from encoder A ({c1}ch)",
            f"  dec3: {c1}->{2 * c0}, up to {s // 2}px, PMM+SCA, additive skip from stem tap ({c0}ch)",
            f"  dec4: {2 * c0}->{2 * c0}, up to {s}px, PMM+SCA, additive skip from input ({c.in_channels}ch)",
            f"  head: stride-1 tconv + 2 convs -> {c.num_classes} classes, softmax",
            f"  parameters: {self.param_count():,}",
        ]
        return "\n".join(lines)
