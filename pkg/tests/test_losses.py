"""Loss oracles: frozen scalar values, reduction identities, gradients."""

import numpy as np
import pytest

from pmadnet import ops
from pmadnet.errors import InvalidGamma, ShapeMismatch
from pmadnet.gradcheck import grad_check
from pmadnet.losses import (cce_loss, dice_loss, focal_loss, jaccard_loss,
                            total_seg_loss)
from pmadnet.tensor import Tensor


def onehot_maps(labels, k):
    """[N,H,W] int labels -> [N,K,H,W] one-hot float maps."""
    n, h, w = labels.shape
    out = np.zeros((n, k, h, w), dtype=np.float64)
    for ki in range(k):
        out[:, ki][labels == ki] = 1.0
    return out


def random_prob_maps(rng, shape):
    logits = rng.standard_normal(shape)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class TestFocal:
    def test_perfect_prediction_is_zero(self):
        labels = np.zeros((1, 4, 4), dtype=np.int64)
        target = onehot_maps(labels, 2)
        loss = focal_loss(Tensor(target.copy()), target, gamma=2.0)
        assert loss.data == pytest.approx(0.0, abs=1e-12)

    def test_half_probability_gamma_two(self):
        probs = np.full((1, 2, 1, 1), 0.5)
        target = onehot_maps(np.zeros((1, 1, 1), dtype=np.int64), 2)
        loss = focal_loss(Tensor(probs), target, gamma=2.0)
        assert loss.data == pytest.approx(0.25 * np.log(2.0), rel=1e-12)

    def test_gamma_zero_equals_cross_entropy(self):
        rng = np.random.default_rng(11)
        probs = random_prob_maps(rng, (2, 3, 5, 5))
        labels = rng.integers(0, 3, size=(2, 5, 5))
        target = onehot_maps(labels, 3)
        focal = focal_loss(Tensor(probs), target, gamma=0.0)
        p_true = (probs * target).sum(axis=1)
        ce = -np.log(np.clip(p_true, 1e-7, 1.0)).mean()
        assert abs(float(focal.data) - ce) < 1e-12

    def test_focal_never_exceeds_cross_entropy(self):
        rng = np.random.default_rng(5)
        for seed in range(5):
            r = np.random.default_rng(seed)
            probs = random_prob_maps(r, (1, 2, 6, 6))
            labels = r.integers(0, 2, size=(1, 6, 6))
            target = onehot_maps(labels, 2)
            for gamma in (0.5, 1.0, 2.0, 4.0):
                f = float(focal_loss(Tensor(probs), target, gamma).data)
                ce = float(focal_loss(Tensor(probs), target, 0.0).data)
                assert f <= ce + 1e-12

    def test_negative_gamma_rejected(self):
        probs = np.full((1, 2, 1, 1), 0.5)
        with pytest.raises(InvalidGamma):
            focal_loss(Tensor(probs), probs, gamma=-1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            focal_loss(Tensor(np.zeros((1, 2, 4, 4))), np.zeros((1, 2, 3, 3)))

    def test_gradient(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 2, size=(1, 4, 4))
        target = onehot_maps(labels, 2)

        def f(x):
            return focal_loss(ops.softmax(x, axis=1), target, gamma=2.0)

        x0 = rng.standard_normal((1, 2, 4, 4))
        res = grad_check(f, x0, rng=np.random.default_rng(0), max_coords=24)
        assert res.passed, str(res)


class TestOverlapLosses:
    def make_case(self):
        # 4x4 field: prediction marks 2 pixels, truth marks 2, 1 shared.
        pred_fg = np.zeros((4, 4))
        pred_fg[0, 0] = pred_fg[0, 1] = 1.0
        gt_fg = np.zeros((4, 4))
        gt_fg[0, 1] = gt_fg[0, 2] = 1.0
        probs = np.stack([1.0 - pred_fg, pred_fg])[None]
        target = np.stack([1.0 - gt_fg, gt_fg])[None]
        return Tensor(probs), target

    def test_jaccard_counting_oracle(self):
        probs, target = self.make_case()
        assert float(jaccard_loss(probs, target).data) == pytest.approx(1 - 1 / 3, abs=1e-5)

    def test_dice_counting_oracle(self):
        probs, target = self.make_case()
        assert float(dice_loss(probs, target).data) == pytest.approx(0.5, abs=1e-5)

    def test_perfect_overlap_near_zero(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 2, size=(1, 6, 6))
        target = onehot_maps(labels, 2)
        assert float(jaccard_loss(Tensor(target.copy()), target).data) < 1e-6
        assert float(dice_loss(Tensor(target.copy()), target).data) < 1e-6

    def test_disjoint_masks_near_one(self):
        pred_fg = np.zeros((4, 4)); pred_fg[0, 0] = 1.0
        gt_fg = np.zeros((4, 4)); gt_fg[3, 3] = 1.0
        probs = Tensor(np.stack([1 - pred_fg, pred_fg])[None])
        target = np.stack([1 - gt_fg, gt_fg])[None]
        assert float(jaccard_loss(probs, target).data) == pytest.approx(1.0, abs=1e-5)
        assert float(dice_loss(probs, target).data) == pytest.approx(1.0, abs=1e-5)

    def test_needs_four_dims(self):
        with pytest.raises(ShapeMismatch):
            jaccard_loss(Tensor(np.zeros((2, 3))), np.zeros((2, 3)))

    @pytest.mark.parametrize("loss_fn", [jaccard_loss, dice_loss])
    def test_gradient(self, loss_fn):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, 2, size=(1, 5, 5))
        target = onehot_maps(labels, 2)

        def f(x):
            return loss_fn(ops.softmax(x, axis=1), target)

        x0 = rng.standard_normal((1, 2, 5, 5))
        res = grad_check(f, x0, rng=np.random.default_rng(1), max_coords=20)
        assert res.passed, str(res)


class TestTotalLoss:
    def test_components_sum_exactly(self):
        rng = np.random.default_rng(9)
        probs_data = random_prob_maps(rng, (2, 2, 6, 6))
        labels = rng.integers(0, 2, size=(2, 6, 6))
        target = onehot_maps(labels, 2)
        for include_dice in (False, True):
            total = float(total_seg_loss(Tensor(probs_data), target, 2.0, include_dice).data)
            expect = float(focal_loss(Tensor(probs_data), target, 2.0).data) \
                + float(jaccard_loss(Tensor(probs_data), target).data)
            if include_dice:
                expect += float(dice_loss(Tensor(probs_data), target).data)
            assert total == expect

    def test_perfect_prediction_near_zero(self):
        labels = np.zeros((1, 4, 4), dtype=np.int64)
        labels[0, 1:3, 1:3] = 1
        target = onehot_maps(labels, 2)
        assert float(total_seg_loss(Tensor(target.copy()), target).data) < 1e-6

    def test_gradient_flows_to_probs(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 2, size=(1, 4, 4))
        target = onehot_maps(labels, 2)
        x = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
        total_seg_loss(ops.softmax(x, axis=1), target, include_dice=True).backward()
        assert x.grad is not None and np.any(x.grad != 0)


class TestCCE:
    def test_uniform_scores(self):
        scores = Tensor(np.zeros((4, 3)))
        labels = np.array([0, 1, 2, 0])
        assert float(cce_loss(scores, labels).data) == pytest.approx(np.log(3.0), rel=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((5, 3))
        labels = rng.integers(0, 3, size=5)
        a = float(cce_loss(Tensor(x), labels).data)
        b = float(cce_loss(Tensor(x + 123.456), labels).data)
        assert a == pytest.approx(b, rel=1e-12)

    def test_confident_correct_approaches_zero(self):
        x = np.zeros((1, 3))
        x[0, 1] = 50.0
        assert float(cce_loss(Tensor(x), np.array([1])).data) < 1e-12

    def test_onehot_target_accepted(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 3))
        labels = rng.integers(0, 3, size=4)
        onehot = np.eye(3)[labels]
        a = float(cce_loss(Tensor(x), labels).data)
        b = float(cce_loss(Tensor(x), onehot).data)
        assert a == b

    def test_extreme_scores_stay_finite(self):
        x = np.array([[1000.0, -1000.0, 0.0]])
        v = float(cce_loss(Tensor(x), np.array([1])).data)
        assert np.isfinite(v) and v == pytest.approx(2000.0, rel=1e-9)

    def test_bad_shapes(self):
        with pytest.raises(ShapeMismatch):
            cce_loss(Tensor(np.zeros((4,))), np.array([0]))
        with pytest.raises(ShapeMismatch):
            cce_loss(Tensor(np.zeros((4, 3))), np.array([0, 1]))
        with pytest.raises(ShapeMismatch):
            cce_loss(Tensor(np.zeros((2, 3))), np.array([0, 3]))

    def test_gradient(self):
        rng = np.random.default_rng(6)
        labels = rng.integers(0, 3, size=4)

        def f(x):
            return cce_loss(x, labels)

        res = grad_check(f, rng.standard_normal((4, 3)),
                         rng=np.random.default_rng(2), max_coords=12)
        assert res.passed, str(res)

    def test_gradient_matches_softmax_minus_onehot(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((6, 3))
        labels = rng.integers(0, 3, size=6)
        t = Tensor(x, requires_grad=True)
        cce_loss(t, labels).backward()
        e = np.exp(x - x.max(axis=1, keepdims=True))
        soft = e / e.sum(axis=1, keepdims=True)
        soft[np.arange(6), labels] -= 1.0
        np.testing.assert_allclose(t.grad, soft / 6, rtol=1e-12, atol=1e-15)
