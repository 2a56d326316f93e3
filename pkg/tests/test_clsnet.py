"""Classifier network: config, CSFEM enhancement block, conv blocks,
input construction, and the assembled model."""

import numpy as np
import pytest

from pmadnet import ops
from pmadnet.attention import CSFEMBlock
from pmadnet.clsnet import (CLASS_NAMES, ClsNetConfig, CSFECNet,
                            make_classifier_input, trace_sizes)
from pmadnet.errors import ConfigError, ShapeMismatch, UnknownLayer
from pmadnet.gradcheck import grad_check
from pmadnet.modules import ConvBNAct
from pmadnet.tensor import Tensor


def _rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _conv_direct(x, w, b, pad):
    """Plain-loop 2-D convolution oracle, stride 1: x [C,H,W] -> [O,H',W']."""
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    oh, ow = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    out = np.zeros((o, oh, ow))
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                out[oc, i, j] = np.sum(xp[:, i:i + kh, j:j + kw] * w[oc]) + b[oc]
    return out


class TestClsNetConfig:
    def test_tiny_widths_are_base_over_8(self):
        cfg = ClsNetConfig.tiny()
        assert cfg.widths == (64, 32, 32, 16, 16, 16, 8)
        assert cfg.dense_width == 16

    def test_paper_widths(self):
        cfg = ClsNetConfig.paper()
        assert cfg.widths == (512, 256, 256, 128, 128, 128, 64)
        assert cfg.dense_width == 128

    def test_validation(self):
        with pytest.raises(ConfigError):
            ClsNetConfig(num_classes=2).validate()
        with pytest.raises(ConfigError):
            ClsNetConfig(input_size=30).validate()
        with pytest.raises(ConfigError):
            ClsNetConfig(input_size=33).validate()

    def test_dict_roundtrip(self):
        cfg = ClsNetConfig.tiny(input_size=32)
        assert ClsNetConfig.from_dict(cfg.to_dict()) == cfg

    def test_trace_sizes(self):
        assert trace_sizes(64) == {"wide": 68, "mid": 35, "low": 18, "up": 36}
        assert trace_sizes(32) == {"wide": 36, "mid": 19, "low": 10, "up": 20}


class TestCSFEM:
    def test_shape_preserved(self):
        blk = CSFEMBlock(5, np.random.default_rng(0))
        blk.eval()
        x = Tensor(_rand((2, 5, 7, 9)))
        assert blk(x).data.shape == (2, 5, 7, 9)

    def test_zero_msa_scale_leaves_gated_map(self):
        blk = CSFEMBlock(4, np.random.default_rng(1))
        blk.eval()
        x = Tensor(_rand((1, 4, 6, 6), seed=2))
        blk.msa_scale = 0.0
        got = blk(x).data
        f = ops.mul_gate(x, blk.spatial(x))
        f = ops.mul_gate(f, blk.channel(x))
        assert np.array_equal(got, f.data)

    def test_elementwise_oracle_1x4x6x6(self):
        blk = CSFEMBlock(4, np.random.default_rng(3))
        blk.eval()
        x = _rand((1, 4, 6, 6), seed=4)
        got = blk(Tensor(x)).data[0]

        x0 = x[0]
        pooled = np.stack([x0.mean(axis=0), x0.max(axis=0)])
        s = _sigmoid(_conv_direct(pooled, blk.spatial.conv.w.data,
                                  blk.spatial.conv.b.data, 0))[0]
        gap = x0.mean(axis=(1, 2))
        z = np.maximum(gap @ blk.channel.fc1.w.data + blk.channel.fc1.b.data, 0.0)
        g = _sigmoid(z @ blk.channel.fc2.w.data + blk.channel.fc2.b.data)
        f = x0 * s[None] * g[:, None, None]

        mixed = np.concatenate([
            _conv_direct(f, blk.k1.w.data, blk.k1.b.data, 0),
            _conv_direct(f, blk.k3.w.data, blk.k3.b.data, 1),
            _conv_direct(f, blk.k5.w.data, blk.k5.b.data, 2),
        ])
        gate = _sigmoid(_conv_direct(mixed, blk.agg.w.data, blk.agg.b.data, 0))
        expected = f + gate * f
        assert np.allclose(got, expected, atol=1e-10)

    def test_gates_bounded_and_output_finite(self):
        blk = CSFEMBlock(4, np.random.default_rng(5))
        blk.eval()
        x = Tensor(_rand((1, 4, 8, 8), seed=6) * 10)
        s = blk.spatial(x).data
        g = blk.channel(x).data
        f = ops.mul_gate(ops.mul_gate(x, blk.spatial(x)), blk.channel(x))
        m = blk.msa_gate(f).data
        for gate in (s, g, m):
            assert np.all(gate > 0) and np.all(gate < 1)
        assert np.all(np.isfinite(blk(x).data))

    def test_grad_check(self):
        blk = CSFEMBlock(4, np.random.default_rng(7))
        blk.eval()
        res = grad_check(lambda t: ops.mean_all(blk(t)),
                         _rand((1, 4, 6, 6), seed=8), max_coords=30)
        assert res.max_rel_error < 1e-4, res


class TestConvBlocks:
    def test_k3_p2_grows_by_two(self):
        blk = ConvBNAct(3, 8, 3, np.random.default_rng(0), padding=2)
        blk.eval()
        out = blk(Tensor(_rand((1, 3, 10, 10))))
        assert out.data.shape == (1, 8, 12, 12)

    def test_silu_zero_input_zero_output(self):
        blk = ConvBNAct(2, 4, 3, np.random.default_rng(0), padding=1, act="silu")
        blk.eval()
        out = blk(Tensor(np.zeros((1, 2, 6, 6))))
        assert np.array_equal(out.data, np.zeros((1, 4, 6, 6)))

    def test_grad_check(self):
        blk = ConvBNAct(2, 3, 3, np.random.default_rng(1), padding=2, act="silu")
        blk.eval()
        res = grad_check(lambda t: ops.mean_all(blk(t)),
                         _rand((1, 2, 6, 6), seed=2), max_coords=30)
        assert res.max_rel_error < 1e-4, res

    def test_double_block_composition(self):
        a = ConvBNAct(4, 4, 3, np.random.default_rng(2), padding=1)
        b = ConvBNAct(4, 4, 3, np.random.default_rng(3), padding=1)
        a.eval()
        b.eval()
        x = Tensor(_rand((1, 4, 8, 8), seed=4))
        chained = b(a(x)).data
        mid = a(x)
        two_step = b(mid).data
        assert np.array_equal(chained, two_step)
        assert chained.shape == (1, 4, 8, 8)

    def test_zero_weights_constant_output(self):
        blk = ConvBNAct(2, 4, 3, np.random.default_rng(4), padding=1)
        blk.eval()
        blk.conv.w.data[...] = 0.0
        blk.conv.b.data[...] = 0.0
        out = blk(Tensor(_rand((1, 2, 6, 6), seed=5))).data
        assert np.array_equal(out, np.zeros_like(out))


class TestMakeClassifierInput:
    def test_all_ones_mask_replicates_image(self):
        img = _rand((8, 8), seed=0) * 0.25 + 0.5
        out = make_classifier_input(img, np.ones((8, 8), dtype=np.uint8))
        assert out.data.shape == (3, 8, 8)
        for ch in range(3):
            assert np.array_equal(out.data[ch], img)

    def test_all_zeros_mask_gives_zero_tensor(self):
        img = _rand((8, 8), seed=1)
        out = make_classifier_input(img, np.zeros((8, 8), dtype=np.uint8))
        assert np.array_equal(out.data, np.zeros((3, 8, 8)))

    def test_half_mask_elementwise_product(self):
        img = _rand((6, 6), seed=2)
        mask = np.zeros((6, 6), dtype=np.uint8)
        mask[:, :3] = 1
        out = make_classifier_input(img, mask)
        expected = np.empty((6, 6))
        for i in range(6):
            for j in range(6):
                expected[i, j] = img[i, j] * mask[i, j]
        for ch in range(3):
            assert np.array_equal(out.data[ch], expected)

    def test_rejections(self):
        with pytest.raises(ShapeMismatch):
            make_classifier_input(_rand((4, 4)), np.ones((5, 5), dtype=np.uint8))
        with pytest.raises(ShapeMismatch):
            make_classifier_input(_rand((4, 4)), np.full((4, 4), 2, dtype=np.uint8))
        with pytest.raises(ShapeMismatch):
            make_classifier_input(_rand((4, 4, 3)), np.ones((4, 4), dtype=np.uint8))


@pytest.fixture(scope="module")
def tiny_cls():
    model = CSFECNet(ClsNetConfig.tiny(input_size=32), np.random.default_rng(0))
    model.eval()
    return model


class TestCSFECNet:
    def test_probability_vector_contract(self, tiny_cls):
        x = Tensor(_rand((2, 3, 32, 32), seed=1) * 0.2 + 0.4)
        probs = tiny_cls.forward(x)
        assert probs.data.shape == (2, 3)
        assert np.all(np.isfinite(probs.data))
        assert np.allclose(probs.data.sum(axis=1), 1.0, atol=1e-6)
        assert probs.data.min() >= 0.0

    def test_scores_and_probs_consistent(self, tiny_cls):
        x = Tensor(_rand((1, 3, 32, 32), seed=2))
        probs, scores = tiny_cls.forward(x, return_scores=True)
        assert scores.data.shape == (1, 3)
        e = np.exp(scores.data - scores.data.max(axis=1, keepdims=True))
        assert np.allclose(probs.data, e / e.sum(axis=1, keepdims=True), atol=1e-12)

    def test_tiny_on_64px_runs_finite(self):
        model = CSFECNet(ClsNetConfig.tiny(input_size=64), np.random.default_rng(0))
        model.eval()
        probs = model.forward(Tensor(_rand((1, 3, 64, 64), seed=3)))
        assert np.all(np.isfinite(probs.data))

    def test_batch_permutation_equivariance(self, tiny_cls):
        x = _rand((3, 3, 32, 32), seed=4)
        out = tiny_cls.forward(Tensor(x)).data
        perm = [1, 2, 0]
        out_perm = tiny_cls.forward(Tensor(x[perm])).data
        assert np.allclose(out[perm], out_perm, atol=1e-10)

    def test_input_validation(self, tiny_cls):
        with pytest.raises(ShapeMismatch):
            tiny_cls.forward(Tensor(_rand((1, 1, 32, 32))))
        with pytest.raises(ShapeMismatch):
            tiny_cls.forward(Tensor(_rand((1, 3, 64, 64))))

    def test_capture_and_unknown_layer(self, tiny_cls):
        names = tiny_cls.layer_names()
        assert tiny_cls.default_cam_layer() in names
        x = Tensor(_rand((1, 3, 32, 32), seed=5))
        tiny_cls.forward(x, capture={"csfem", "reunion"})
        sizes = trace_sizes(32)
        cap = tiny_cls.captured
        assert cap["csfem"].data.shape[2:] == (sizes["wide"], sizes["wide"])
        assert cap["reunion"].data.shape[2:] == (sizes["up"], sizes["up"])
        with pytest.raises(UnknownLayer):
            tiny_cls.forward(x, capture={"bogus"})

    def test_every_parameter_reachable(self, tiny_cls):
        tiny_cls.zero_grad()
        probs = tiny_cls.forward(Tensor(_rand((1, 3, 32, 32), seed=6)))
        ops.mean_all(probs).backward()
        missing = [name for name, p in tiny_cls.named_parameters().items()
                   if p.grad is None]
        assert missing == []

    def test_describe_mentions_wiring(self, tiny_cls):
        text = tiny_cls.describe()
        assert "classification" in text
        assert "enhancement" in text

    def test_class_names_order(self):
        assert CLASS_NAMES == ("benign", "malignant", "normal")
