"""Catalog of scalar-valued probes for every differentiable primitive.

Each entry is (name, make) where make(rng) returns (f, x0): a pure function
f(Tensor) -> scalar Tensor and the float64 input to probe.  The gradcheck
CLI command sweeps the whole catalog into a pass/fail table; the test suite
runs the same entries at various seed counts.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


def _away_from_zero(rng, shape, margin=0.15):
    """Random values with |v| >= margin, keeping ReLU-family kinks far away."""
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < margin, margin * np.sign(x) + (x == 0) * margin, x)
    return x


def _const(rng, shape, lo=0.1, hi=0.9):
    return rng.uniform(lo, hi, size=shape)


def _probe_weights(rng, shape):
    return rng.standard_normal(shape) * 0.5


def build_suite():
    entries = []

    def entry(name):
        def wrap(fn):
            entries.append((name, fn))
            return fn

        return wrap

    @entry("add")
    def _(rng):
        b = Tensor(rng.standard_normal((3, 4)))
        return lambda x: ops.mean_all(ops.add(x, b)), rng.standard_normal((3, 4))

    @entry("sub")
    def _(rng):
        b = Tensor(rng.standard_normal((3, 4)))
        return lambda x: ops.mean_all(ops.sub(x, b)), rng.standard_normal((3, 4))

    @entry("mul")
    def _(rng):
        b = Tensor(rng.standard_normal((3, 4)))
        return lambda x: ops.mean_all(ops.mul(x, b)), rng.standard_normal((3, 4))

    @entry("mul_self")
    def _(rng):
        # Fan-out: both operands are the same tensor.
        return lambda x: ops.mean_all(ops.mul(x, x)), rng.standard_normal((3, 4))

    @entry("div")
    def _(rng):
        b = Tensor(_const(rng, (3, 4), 0.5, 2.0))
        return lambda x: ops.mean_all(ops.div(x, b)), rng.standard_normal((3, 4))

    @entry("div_denominator")
    def _(rng):
        a = Tensor(rng.standard_normal((3, 4)))
        return lambda x: ops.mean_all(ops.div(a, x)), _const(rng, (3, 4), 0.5, 2.0)

    @entry("scale")
    def _(rng):
        return lambda x: ops.sum_all(ops.scale(x, -2.5)), rng.standard_normal((5,))

    @entry("add_scalar")
    def _(rng):
        return lambda x: ops.sum_all(ops.add_scalar(x, 3.25)), rng.standard_normal((5,))

    @entry("pow_const")
    def _(rng):
        return lambda x: ops.mean_all(ops.pow_const(x, 2.0)), rng.standard_normal((3, 4))

    @entry("pow_fractional")
    def _(rng):
        return lambda x: ops.mean_all(ops.pow_const(x, 0.5)), _const(rng, (3, 4), 0.2, 0.9)

    @entry("log")
    def _(rng):
        return lambda x: ops.mean_all(ops.log(x)), _const(rng, (3, 4), 0.2, 2.0)

    @entry("clamp")
    def _(rng):
        return lambda x: ops.mean_all(ops.clamp(x, -0.5, 0.5)), _away_from_zero(rng, (4, 4)) * 0.6

    @entry("relu")
    def _(rng):
        return lambda x: ops.mean_all(ops.relu(x)), _away_from_zero(rng, (4, 4))

    @entry("leaky_relu")
    def _(rng):
        return lambda x: ops.mean_all(ops.leaky_relu(x, 0.1)), _away_from_zero(rng, (4, 4))

    @entry("sigmoid")
    def _(rng):
        return lambda x: ops.mean_all(ops.sigmoid(x)), rng.uniform(-4, 4, (4, 4))

    @entry("silu")
    def _(rng):
        return lambda x: ops.mean_all(ops.silu(x)), rng.uniform(-4, 4, (4, 4))

    @entry("gelu")
    def _(rng):
        # Bounded probe: past |x| ~ 3 the true slope decays like exp(-x^2/2)
        # and central differences lose all relative accuracy.
        return lambda x: ops.mean_all(ops.gelu(x)), rng.uniform(-3, 3, (4, 4))

    @entry("softmax")
    def _(rng):
        w = Tensor(rng.standard_normal((2, 5, 3, 3)))
        return lambda x: ops.mean_all(ops.mul(ops.softmax(x, axis=1), w)), rng.standard_normal((2, 5, 3, 3))

    @entry("dropout")
    def _(rng):
        seed = int(rng.integers(0, 2**31))

        def f(x):
            # Fresh generator per call freezes the mask for the FD probes.
            return ops.mean_all(ops.dropout(x, 0.4, True, np.random.default_rng(seed)))

        return f, rng.standard_normal((4, 4))

    @entry("sum_all")
    def _(rng):
        return lambda x: ops.sum_all(x), rng.standard_normal((2, 3, 2))

    @entry("mean_all")
    def _(rng):
        return lambda x: ops.mean_all(x), rng.standard_normal((2, 3, 2))

    @entry("sum_axis")
    def _(rng):
        w = Tensor(rng.standard_normal((2, 3)))
        return lambda x: ops.mean_all(ops.mul(ops.sum_axis(x, axis=1), w)), rng.standard_normal((2, 4, 3))

    @entry("reshape")
    def _(rng):
        w = Tensor(rng.standard_normal((6, 2)))
        return lambda x: ops.sum_all(ops.mul(ops.reshape(x, (6, 2)), w)), rng.standard_normal((3, 4))

    @entry("flatten")
    def _(rng):
        w = Tensor(rng.standard_normal((2, 12)))
        return lambda x: ops.sum_all(ops.mul(ops.flatten(x), w)), rng.standard_normal((2, 3, 2, 2))

    @entry("concat_channels")
    def _(rng):
        b = Tensor(rng.standard_normal((2, 3, 4, 4)))
        w = Tensor(rng.standard_normal((2, 5, 4, 4)))
        return lambda x: ops.mean_all(ops.mul(ops.concat_channels(x, b), w)), rng.standard_normal((2, 2, 4, 4))

    @entry("channel_slice")
    def _(rng):
        w = Tensor(rng.standard_normal((2, 2, 3, 3)))
        return lambda x: ops.mean_all(ops.mul(ops.channel_slice(x, 1, 3), w)), rng.standard_normal((2, 5, 3, 3))

    @entry("crop_center")
    def _(rng):
        w = Tensor(rng.standard_normal((2, 2, 4, 4)))
        return lambda x: ops.mean_all(ops.mul(ops.crop_center(x, 4, 4), w)), rng.standard_normal((2, 2, 6, 6))

    @entry("mul_gate_channel")
    def _(rng):
        g = Tensor(_const(rng, (2, 3, 1, 1)))
        return lambda x: ops.mean_all(ops.mul_gate(x, g)), rng.standard_normal((2, 3, 4, 4))

    @entry("mul_gate_channel_grad")
    def _(rng):
        f = Tensor(rng.standard_normal((2, 3, 4, 4)))
        return lambda x: ops.mean_all(ops.mul_gate(f, ops.reshape(x, (2, 3, 1, 1)))), rng.standard_normal((2, 3))

    @entry("mul_gate_spatial")
    def _(rng):
        f = Tensor(rng.standard_normal((2, 3, 4, 4)))
        return lambda x: ops.mean_all(ops.mul_gate(f, ops.reshape(x, (2, 1, 4, 4)))), rng.standard_normal((2, 4, 4))

    @entry("dense")
    def _(rng):
        w = Tensor(_probe_weights(rng, (6, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal(4) * 0.1, requires_grad=True)
        return lambda x: ops.mean_all(ops.dense(x, w, b)), rng.standard_normal((3, 6))

    @entry("dense_weight")
    def _(rng):
        a = Tensor(rng.standard_normal((3, 6)))
        b = Tensor(rng.standard_normal(4) * 0.1)
        return lambda x: ops.mean_all(ops.dense(a, x, b)), _probe_weights(rng, (6, 4))

    @entry("conv2d_s1p1")
    def _(rng):
        w = Tensor(_probe_weights(rng, (4, 3, 3, 3)))
        b = Tensor(rng.standard_normal(4) * 0.1)
        return lambda x: ops.mean_all(ops.conv2d(x, w, b, stride=1, padding=1)), rng.standard_normal((2, 3, 6, 6))

    @entry("conv2d_s2p0_weight")
    def _(rng):
        a = Tensor(rng.standard_normal((2, 3, 7, 7)))
        b = Tensor(rng.standard_normal(4) * 0.1)
        return lambda x: ops.mean_all(ops.conv2d(a, x, b, stride=2, padding=0)), _probe_weights(rng, (4, 3, 3, 3))

    @entry("conv2d_bias")
    def _(rng):
        a = Tensor(rng.standard_normal((2, 3, 5, 5)))
        w = Tensor(_probe_weights(rng, (4, 3, 3, 3)))
        return lambda x: ops.mean_all(ops.conv2d(a, w, x, stride=1, padding=1)), rng.standard_normal(4)

    @entry("conv2d_stride_remainder")
    def _(rng):
        # (6 - 3) % 2 == 1: the forward never reads the last row/col, whose
        # gradient must come back exactly zero, not garbage.
        w = Tensor(_probe_weights(rng, (2, 2, 3, 3)))
        b = Tensor(rng.standard_normal(2) * 0.1)
        return lambda x: ops.mean_all(ops.conv2d(x, w, b, stride=2, padding=0)), rng.standard_normal((1, 2, 6, 6))

    @entry("conv2d_rect_1x7")
    def _(rng):
        w = Tensor(_probe_weights(rng, (2, 2, 1, 7)))
        b = Tensor(rng.standard_normal(2) * 0.1)
        return lambda x: ops.mean_all(ops.conv2d(x, w, b, stride=1, padding=(0, 3))), rng.standard_normal((1, 2, 4, 6))

    @entry("conv2d_k1")
    def _(rng):
        w = Tensor(_probe_weights(rng, (5, 3, 1, 1)))
        b = Tensor(rng.standard_normal(5) * 0.1)
        return lambda x: ops.mean_all(ops.conv2d(x, w, b)), rng.standard_normal((2, 3, 4, 4))

    @entry("tconv2d_s2p0")
    def _(rng):
        w = Tensor(_probe_weights(rng, (3, 4, 2, 2)))
        b = Tensor(rng.standard_normal(4) * 0.1)
        return lambda x: ops.mean_all(ops.transpose_conv2d(x, w, b, stride=2, padding=0)), rng.standard_normal((2, 3, 4, 4))

    @entry("tconv2d_s2p1_weight")
    def _(rng):
        a = Tensor(rng.standard_normal((2, 3, 4, 4)))
        return lambda x: ops.mean_all(ops.transpose_conv2d(a, x, None, stride=2, padding=1)), _probe_weights(rng, (3, 4, 3, 3))

    @entry("tconv2d_s1p1")
    def _(rng):
        w = Tensor(_probe_weights(rng, (3, 4, 3, 3)))
        b = Tensor(rng.standard_normal(4) * 0.1)
        return lambda x: ops.mean_all(ops.transpose_conv2d(x, w, b, stride=1, padding=1)), rng.standard_normal((2, 3, 5, 5))

    @entry("maxpool2d")
    def _(rng):
        # Distinct values in every window keep the max off a tie kink.
        n = 2 * 3 * 6 * 6
        base = rng.permutation(n).astype(np.float64).reshape(2, 3, 6, 6)
        return lambda x: ops.mean_all(ops.maxpool2d(x, 2, 2)), base / n + rng.standard_normal((2, 3, 6, 6)) * 1e-3

    @entry("maxpool2d_overlap")
    def _(rng):
        n = 2 * 2 * 7 * 7
        base = rng.permutation(n).astype(np.float64).reshape(2, 2, 7, 7)
        return lambda x: ops.mean_all(ops.maxpool2d(x, 3, 2)), base / n + rng.standard_normal((2, 2, 7, 7)) * 1e-3

    @entry("avgpool2d")
    def _(rng):
        return lambda x: ops.mean_all(ops.avgpool2d(x, 2, 2)), rng.standard_normal((2, 3, 6, 6))

    @entry("avgpool2d_overlap")
    def _(rng):
        return lambda x: ops.mean_all(ops.avgpool2d(x, 3, 2)), rng.standard_normal((2, 2, 7, 7))

    @entry("channel_mean")
    def _(rng):
        w = Tensor(rng.standard_normal((2, 1, 3, 3)))
        return lambda x: ops.mean_all(ops.mul(ops.channel_mean(x), w)), rng.standard_normal((2, 4, 3, 3))

    @entry("channel_max")
    def _(rng):
        # Distinct channel values keep the max away from tie kinks.
        n = 2 * 4 * 3 * 3
        base = rng.permutation(n).astype(np.float64).reshape(2, 4, 3, 3) / n
        w = Tensor(rng.standard_normal((2, 1, 3, 3)))
        return lambda x: ops.mean_all(ops.mul(ops.channel_max(x), w)), base

    @entry("global_avgpool")
    def _(rng):
        w = Tensor(rng.standard_normal((2, 3, 1, 1)))
        return lambda x: ops.mean_all(ops.mul(ops.global_avgpool(x), w)), rng.standard_normal((2, 3, 5, 5))

    @entry("batch_norm_train")
    def _(rng):
        g = Tensor(_const(rng, (3,), 0.5, 1.5), requires_grad=True)
        bt = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)

        def f(x):
            rm, rv = np.zeros(3), np.ones(3)
            return ops.mean_all(
                ops.mul(ops.batch_norm(x, g, bt, rm, rv, training=True), Tensor(weights))
            )

        weights = rng.standard_normal((2, 3, 4, 4))
        return f, rng.standard_normal((2, 3, 4, 4))

    @entry("batch_norm_eval")
    def _(rng):
        g = Tensor(_const(rng, (3,), 0.5, 1.5))
        bt = Tensor(rng.standard_normal(3) * 0.1)
        rm = rng.standard_normal(3) * 0.2
        rv = _const(rng, (3,), 0.5, 1.5)
        weights = rng.standard_normal((2, 3, 4, 4))
        return (
            lambda x: ops.mean_all(
                ops.mul(ops.batch_norm(x, g, bt, rm.copy(), rv.copy(), training=False), Tensor(weights))
            ),
            rng.standard_normal((2, 3, 4, 4)),
        )

    @entry("batch_norm_gamma")
    def _(rng):
        a = Tensor(rng.standard_normal((2, 3, 4, 4)))
        bt = Tensor(rng.standard_normal(3) * 0.1)
        weights = rng.standard_normal((2, 3, 4, 4))

        def f(x):
            rm, rv = np.zeros(3), np.ones(3)
            return ops.mean_all(ops.mul(ops.batch_norm(a, x, bt, rm, rv, training=True), Tensor(weights)))

        return f, _const(rng, (3,), 0.5, 1.5)

    @entry("resize_bilinear_up")
    def _(rng):
        w = Tensor(rng.standard_normal((2, 2, 7, 9)))
        return lambda x: ops.mean_all(ops.mul(ops.resize_bilinear(x, 7, 9), w)), rng.standard_normal((2, 2, 4, 5))

    @entry("resize_bilinear_down")
    def _(rng):
        w = Tensor(rng.standard_normal((2, 2, 3, 3)))
        return lambda x: ops.mean_all(ops.mul(ops.resize_bilinear(x, 3, 3), w)), rng.standard_normal((2, 2, 5, 6))

    @entry("filter_concat")
    def _(rng):
        w1 = Tensor(_probe_weights(rng, (2, 3, 1, 1)))
        w3 = Tensor(_probe_weights(rng, (2, 3, 3, 3)))
        b1 = Tensor(rng.standard_normal(2) * 0.1)
        b3 = Tensor(rng.standard_normal(2) * 0.1)
        branches = [(w1, b1, 1, 0), (w3, b3, 1, 1)]
        return lambda x: ops.mean_all(ops.filter_concat(x, branches)), rng.standard_normal((2, 3, 5, 5))

    return entries


def build_module_suite():
    """Input-side probes for the composite attention blocks.

    Each probe instantiates a freshly seeded block in eval mode (frozen
    batch statistics, dropout off) so f stays a pure function of its input.
    """
    from .attention import CSFEMBlock, PMMBlock, SCABlock

    def _block_entry(name, build, shape):
        def make(rng):
            block = build(np.random.default_rng(int(rng.integers(2**31))))
            block.eval()
            return (lambda x: ops.mean_all(block.forward(x)),
                    rng.standard_normal(shape) * 0.5)

        return name, make

    return [
        _block_entry("pmm_block",
                     lambda r: PMMBlock(4, r, dropout_rate=0.0), (2, 4, 6, 6)),
        _block_entry("spatial_channel_attention",
                     lambda r: SCABlock(4, r), (2, 4, 6, 6)),
        _block_entry("csfem",
                     lambda r: CSFEMBlock(3, r), (2, 3, 6, 6)),
    ]
