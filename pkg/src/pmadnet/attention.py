"""Attention blocks shared by the segmentation and classification networks.

Three gate granularities appear here: channel gates squeeze the spatial
extent and re-weight channels, spatial gates squeeze the channel extent
and re-weight positions, and the multi-scale gate of CSFEMBlock mixes
receptive fields before gating elementwise.
"""

from __future__ import annotations

from . import ops
from .modules import Conv2d, ConvBNAct, Dense, Dropout, Module
from .tensor import Tensor


class ChannelGate(Module):
    """GAP -> dense -> act -> (dropout) -> dense -> sigmoid, as [N,C,1,1]."""

    def __init__(self, ch: int, rng, act: str = "relu", dropout_rate: float = 0.0):
        super().__init__()
        hidden = max(ch // 2, 4)
        self.ch = ch
        self.fc1 = Dense(ch, hidden, rng)
        self.fc2 = Dense(hidden, ch, rng)
        self.act = act
        self.drop = Dropout(dropout_rate) if dropout_rate > 0 else None

    def forward(self, x: Tensor) -> Tensor:
        n = x.data.shape[0]
        z = ops.flatten(ops.global_avgpool(x))
        z = self.fc1(z)
        z = ops.gelu(z) if self.act == "gelu" else ops.relu(z)
        if self.drop is not None:
            z = self.drop(z)
        z = ops.sigmoid(self.fc2(z))
        return ops.reshape(z, (n, self.ch, 1, 1))


class SpatialGate(Module):
    """sigmoid(1x1 conv over [channel-mean || channel-max]), as [N,1,H,W]."""

    def __init__(self, rng):
        super().__init__()
        self.conv = Conv2d(2, 1, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        pooled = ops.concat_channels(ops.channel_mean(x), ops.channel_max(x))
        return ops.sigmoid(self.conv(pooled))


class SCABlock(Module):
    """Spatial-channel attention: x * spatial gate * channel gate."""

    def __init__(self, ch: int, rng):
        super().__init__()
        self.spatial = SpatialGate(rng)
        self.channel = ChannelGate(ch, rng, act="relu")

    def forward(self, x: Tensor) -> Tensor:
        y = ops.mul_gate(x, self.spatial(x))
        return ops.mul_gate(y, self.channel(x))


class PMMBlock(Module):
    """Precision mapping: dual double-conv spatial gate plus a channel gate.

    Two parallel conv-BN-ReLU pairs are fused additively, rectified, and
    projected to a single-channel sigmoid map; a GELU MLP with dropout gates
    the channels.  Both gates multiply the input.
    """

    def __init__(self, ch: int, rng, dropout_rate: float = 0.2):
        super().__init__()
        self.a1 = ConvBNAct(ch, ch, 3, rng, padding=1)
        self.a2 = ConvBNAct(ch, ch, 3, rng, padding=1)
        self.b1 = ConvBNAct(ch, ch, 3, rng, padding=1)
        self.b2 = ConvBNAct(ch, ch, 3, rng, padding=1)
        self.project = Conv2d(ch, 1, 3, rng, padding=1)
        self.channel = ChannelGate(ch, rng, act="gelu", dropout_rate=dropout_rate)

    def forward(self, x: Tensor) -> Tensor:
        fused = ops.relu(ops.add(self.a2(self.a1(x)), self.b2(self.b1(x))))
        spatial = ops.sigmoid(self.project(fused))
        y = ops.mul_gate(x, spatial)
        return ops.mul_gate(y, self.channel(x))


class CSFEMBlock(Module):
    """Component-specific feature enhancement.

    The input is gated spatially and per channel (as in SCABlock), then a
    multi-scale map built from parallel 1/3/5 convolutions is aggregated by
    a 1x1 convolution, squashed by sigmoid, and applied as a residual
    enhancement: out = f + gate(f) * f.

    msa_scale is a test hook: setting it to 0.0 removes the enhancement
    term exactly, leaving the gated map unchanged.
    """

    def __init__(self, ch: int, rng):
        super().__init__()
        self.spatial = SpatialGate(rng)
        self.channel = ChannelGate(ch, rng, act="relu")
        self.k1 = Conv2d(ch, ch, 1, rng)
        self.k3 = Conv2d(ch, ch, 3, rng, padding=1)
        self.k5 = Conv2d(ch, ch, 5, rng, padding=2)
        self.agg = Conv2d(3 * ch, ch, 1, rng)
        self.msa_scale = 1.0

    def msa_gate(self, f: Tensor) -> Tensor:
        mixed = ops.concat_channels(self.k1(f), self.k3(f), self.k5(f))
        gate = ops.sigmoid(self.agg(mixed))
        if self.msa_scale != 1.0:
            gate = ops.scale(gate, self.msa_scale)
        return gate

    def forward(self, x: Tensor) -> Tensor:
        f = ops.mul_gate(x, self.spatial(x))
        f = ops.mul_gate(f, self.channel(x))
        return ops.add(f, ops.mul(self.msa_gate(f), f))
