"""Optimizer, plateau schedule, training loops, and the checkpoint format."""

import numpy as np
import pytest

from pmadnet.clsnet import ClsNetConfig, CSFECNet, make_classifier_input
from pmadnet.data import DatasetSplit, preprocess_sample, synth_generate
from pmadnet.errors import (ConfigError, CorruptCheckpoint, MissingGradient,
                            VersionMismatch)
from pmadnet.imgproc import PreprocessConfig
from pmadnet.losses import cce_loss, total_seg_loss
from pmadnet.segnet import PMADLinkNet, SegNetConfig
from pmadnet.tensor import Tensor
from pmadnet.training import (LR_FLOOR, TrainConfig, load_checkpoint,
                              plateau_lr, save_checkpoint, sgd_step,
                              train_classifier, train_segmentation)


def _synth_split(n_per_class, size, val_per_class=1, seed=0):
    cfg = PreprocessConfig(target_h=size, target_w=size)
    samples = [preprocess_sample(s, cfg) for s in synth_generate(
        n_per_class + val_per_class, size=size, seed=seed)]
    train = [s for s in samples if int(s.id.split("-")[-1]) < n_per_class]
    val = [s for s in samples if int(s.id.split("-")[-1]) >= n_per_class]
    return DatasetSplit(train, val, seed, (0.8, 0.2))


class TestTrainConfig:
    def test_defaults_match_documented_values(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 0.001
        assert cfg.epochs == 100
        assert cfg.batch_size == 16
        assert cfg.plateau_patience == 5
        assert cfg.plateau_factor == 0.5
        assert cfg.min_improvement == 1e-4

    def test_validation_rejects_bad_fields(self):
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=0.0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(plateau_factor=1.0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(plateau_factor=0.0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0).validate()

    def test_dict_roundtrip(self):
        cfg = TrainConfig(learning_rate=0.01, epochs=3, include_dice=True)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


class TestSgdStep:
    def test_zero_lr_is_identity(self):
        p = Tensor(np.array([1.0, -2.0]))
        p.grad = np.array([5.0, 5.0])
        sgd_step({"p": p}, 0.0)
        assert np.array_equal(p.data, [1.0, -2.0])
        assert p.grad is None

    def test_direct_evaluation(self):
        p = Tensor(np.array([1.0]))
        p.grad = np.array([2.0])
        sgd_step({"p": p}, 0.1)
        assert np.allclose(p.data, [0.8], atol=1e-15)

    def test_two_half_steps_equal_one_for_constant_grad(self):
        a = Tensor(np.array([3.0]))
        b = Tensor(np.array([3.0]))
        g = np.array([1.5])
        a.grad = g.copy()
        sgd_step({"a": a}, 0.1)
        b.grad = g.copy()
        sgd_step({"b": b}, 0.05)
        b.grad = g.copy()
        sgd_step({"b": b}, 0.05)
        assert np.allclose(a.data, b.data, atol=1e-15)

    def test_missing_gradient_raises_with_name(self):
        p = Tensor(np.array([1.0]))
        with pytest.raises(MissingGradient, match="p"):
            sgd_step({"p": p}, 0.1)

    def test_update_preserves_dtype(self):
        p = Tensor(np.array([1.0], dtype=np.float32))
        p.grad = np.array([2.0], dtype=np.float32)
        sgd_step({"p": p}, 0.1)
        assert p.data.dtype == np.float32


class TestPlateauLr:
    def test_strictly_improving_history_unchanged(self):
        cfg = TrainConfig()
        history = [1.0 - 0.01 * k for k in range(12)]
        assert plateau_lr(history, 0.001, cfg) == 0.001

    def test_flat_history_of_patience_plus_one_halves(self):
        cfg = TrainConfig()
        history = [0.7] * (cfg.plateau_patience + 1)
        assert plateau_lr(history, 0.001, cfg) == pytest.approx(0.0005, rel=1e-12)

    def test_floor_is_never_crossed(self):
        cfg = TrainConfig()
        history = [0.7] * (cfg.plateau_patience + 1)
        assert plateau_lr(history, LR_FLOOR, cfg) == LR_FLOOR
        assert plateau_lr(history, 1.5e-6, cfg) >= LR_FLOOR

    def test_two_windows_decay_twice_under_epoch_protocol(self):
        cfg = TrainConfig()
        lr = 0.001
        history = [1.0]
        for _ in range(2 * cfg.plateau_patience):
            history.append(1.0)
            lr = plateau_lr(history, lr, cfg)
        assert lr == pytest.approx(0.001 * 0.25, rel=1e-12)

    def test_improvement_resets_the_stale_counter(self):
        cfg = TrainConfig(plateau_patience=3)
        # two stale epochs, a real improvement, two more stale epochs:
        # no window of three consecutive stale epochs ever completes.
        history = [1.0, 1.0, 1.0, 0.5, 0.5, 0.5]
        lr = 0.001
        for k in range(2, len(history) + 1):
            lr = plateau_lr(history[:k], lr, cfg)
        assert lr == 0.001

    def test_tiny_improvement_below_threshold_counts_as_stale(self):
        cfg = TrainConfig(plateau_patience=2, min_improvement=1e-2)
        history = [1.0, 0.999, 0.998]
        assert plateau_lr(history, 0.001, cfg) == pytest.approx(0.0005)

    def test_monotone_nonincreasing_across_random_histories(self):
        cfg = TrainConfig(plateau_patience=2)
        rng = np.random.default_rng(0)
        for trial in range(50):
            history = list(rng.uniform(0.1, 1.0, size=1))
            lr = 0.001
            for _ in range(15):
                history.append(float(rng.uniform(0.1, 1.0)))
                new_lr = plateau_lr(history, lr, cfg)
                assert new_lr <= lr
                assert new_lr >= LR_FLOOR
                lr = new_lr

    def test_empty_history_rejected(self):
        with pytest.raises(ConfigError):
            plateau_lr([], 0.001, TrainConfig())


class TestTrainSegmentation:
    def test_one_epoch_smoke_finite_losses(self):
        split = _synth_split(2, 32)
        model = PMADLinkNet(SegNetConfig.tiny(), np.random.default_rng(0))
        cfg = TrainConfig(epochs=1, batch_size=2, learning_rate=0.01, seed=0)
        _, reports = train_segmentation(model, split, cfg)
        assert len(reports) == 1
        r = reports[0]
        assert np.isfinite(r.loss_total) and np.isfinite(r.loss_focal)
        assert np.isfinite(r.loss_jaccard)
        assert 0.0 <= r.dice <= 1.0 and 0.0 <= r.iou <= 1.0

    def test_fixed_seed_gives_bit_identical_checkpoint(self, tmp_path):
        split = _synth_split(2, 32)
        cfg = TrainConfig(epochs=1, batch_size=2, learning_rate=0.01, seed=7)
        paths = []
        for run in range(2):
            model = PMADLinkNet(SegNetConfig.tiny(), np.random.default_rng(0))
            train_segmentation(model, split, cfg)
            p = tmp_path / f"run{run}.ckpt"
            save_checkpoint(model, {"epoch": 1}, str(p))
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_early_stop_callback(self):
        split = _synth_split(2, 32)
        model = PMADLinkNet(SegNetConfig.tiny(), np.random.default_rng(0))
        cfg = TrainConfig(epochs=5, batch_size=2, learning_rate=0.01, seed=0)
        _, reports = train_segmentation(model, split, cfg,
                                        on_epoch_end=lambda e, r: e >= 1)
        assert len(reports) == 2

    def test_training_loss_decreases_on_single_sample(self):
        # Overfit oracle: repeated steps on one sample drive its train-mode
        # loss monotonically down over 20 epochs.
        split = _synth_split(1, 32)
        sample = split.train[0]
        model = PMADLinkNet(SegNetConfig.tiny(), np.random.default_rng(1))
        model.astype(np.float64)
        x = sample.image[None, None].astype(np.float64)
        onehot = np.stack([sample.mask == 0, sample.mask == 1])[None].astype(np.float64)
        model.train()
        losses = []
        for step in range(20):
            probs = model.forward(Tensor(x, requires_grad=False))
            loss = total_seg_loss(probs, onehot, 2.0, False)
            losses.append(float(loss.data))
            model.zero_grad()
            loss.backward()
            sgd_step(model.named_parameters(), 0.05)
        assert all(b < a for a, b in zip(losses, losses[1:])), losses


class TestTrainClassifier:
    def test_one_epoch_smoke(self):
        split = _synth_split(2, 32)
        model = CSFECNet(ClsNetConfig.tiny(input_size=32), np.random.default_rng(0))
        cfg = TrainConfig(epochs=1, batch_size=3, learning_rate=0.01, seed=0)
        _, reports = train_classifier(model, split, cfg)
        assert len(reports) == 1
        assert np.isfinite(reports[0].loss_total)
        assert reports[0].confusion is not None
        assert reports[0].confusion.total == len(split.validation)

    def test_fixed_seed_gives_bit_identical_checkpoint(self, tmp_path):
        split = _synth_split(2, 32)
        cfg = TrainConfig(epochs=1, batch_size=3, learning_rate=0.01, seed=3)
        blobs = []
        for run in range(2):
            model = CSFECNet(ClsNetConfig.tiny(input_size=32),
                             np.random.default_rng(0))
            train_classifier(model, split, cfg)
            p = tmp_path / f"c{run}.ckpt"
            save_checkpoint(model, {}, str(p))
            blobs.append(p.read_bytes())
        assert blobs[0] == blobs[1]

    def test_single_sample_loss_heads_to_zero(self):
        split = _synth_split(1, 32)
        sample = split.train[0]
        model = CSFECNet(ClsNetConfig.tiny(input_size=32), np.random.default_rng(2))
        model.astype(np.float64)
        x = make_classifier_input(sample.image, sample.mask).data[None].astype(np.float64)
        label = np.array([sample.label_index])
        model.train()
        first = None
        for step in range(60):
            _, scores = model.forward(Tensor(x, requires_grad=False),
                                      return_scores=True)
            loss = cce_loss(scores, label)
            if first is None:
                first = float(loss.data)
            model.zero_grad()
            loss.backward()
            sgd_step(model.named_parameters(), 0.05)
        _, scores = model.forward(Tensor(x, requires_grad=False), return_scores=True)
        final = float(cce_loss(scores, label).data)
        assert final < first
        assert final < 0.1


class TestStrictDecreaseProperty:
    def test_one_small_step_strictly_decreases_loss(self):
        # epsilon-step property on 10 seeds; train mode, 64-bit.
        cfg = SegNetConfig(input_size=32, base_channels=4, blocks=(1, 1, 1),
                           dropout_rate=0.0)
        for seed in range(10):
            rng = np.random.default_rng(seed)
            model = PMADLinkNet(cfg, rng)
            model.astype(np.float64)
            model.train()
            x = rng.uniform(0.0, 1.0, size=(1, 1, 32, 32))
            mask = (rng.uniform(size=(32, 32)) > 0.7)
            onehot = np.stack([~mask, mask])[None].astype(np.float64)

            probs = model.forward(Tensor(x, requires_grad=False))
            loss = total_seg_loss(probs, onehot, 2.0, False)
            before = float(loss.data)
            model.zero_grad()
            loss.backward()
            sgd_step(model.named_parameters(), 1e-4)

            probs = model.forward(Tensor(x, requires_grad=False))
            after = float(total_seg_loss(probs, onehot, 2.0, False).data)
            assert after < before, f"seed {seed}: {before} -> {after}"


class TestCheckpoint:
    def _trained_seg(self, tmp_path):
        split = _synth_split(2, 32)
        model = PMADLinkNet(SegNetConfig.tiny(), np.random.default_rng(0))
        cfg = TrainConfig(epochs=1, batch_size=2, learning_rate=0.01, seed=0)
        train_segmentation(model, split, cfg)
        return model

    def test_save_load_save_is_byte_identical(self, tmp_path):
        model = self._trained_seg(tmp_path)
        a = tmp_path / "a.ckpt"
        b = tmp_path / "b.ckpt"
        state = {"epoch": 1, "lr": 0.01, "seed": 0}
        save_checkpoint(model, state, str(a))
        loaded, got_state = load_checkpoint(str(a))
        assert got_state == state
        save_checkpoint(loaded, got_state, str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_roundtrip_parameters_bit_exact(self, tmp_path):
        model = self._trained_seg(tmp_path)
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, {}, str(p))
        loaded, _ = load_checkpoint(str(p))
        want = model.named_parameters()
        got = loaded.named_parameters()
        assert set(want) == set(got)
        for name in want:
            assert np.array_equal(want[name].data.astype(np.float32),
                                  got[name].data), name
        wbuf, gbuf = model.named_buffers(), loaded.named_buffers()
        for name in wbuf:
            assert np.array_equal(wbuf[name].astype(np.float32), gbuf[name]), name

    def test_forward_equality_after_load(self, tmp_path):
        model = self._trained_seg(tmp_path)
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, {}, str(p))
        loaded, _ = load_checkpoint(str(p))
        model.eval()
        loaded.eval()
        x = np.random.default_rng(5).uniform(
            size=(1, 1, 32, 32)).astype(np.float32)
        a = model.forward(Tensor(x, requires_grad=False))
        b = loaded.forward(Tensor(x, requires_grad=False))
        assert np.array_equal(a.data, b.data)

    def test_truncated_file_is_corrupt(self, tmp_path):
        model = self._trained_seg(tmp_path)
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, {}, str(p))
        blob = p.read_bytes()
        for cut in (4, len(blob) // 2, len(blob) - 3):
            (tmp_path / "t.ckpt").write_bytes(blob[:cut])
            with pytest.raises(CorruptCheckpoint):
                load_checkpoint(str(tmp_path / "t.ckpt"))

    def test_bad_magic_is_corrupt(self, tmp_path):
        model = self._trained_seg(tmp_path)
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, {}, str(p))
        blob = bytearray(p.read_bytes())
        blob[0] = ord(b"X")
        (tmp_path / "x.ckpt").write_bytes(bytes(blob))
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(str(tmp_path / "x.ckpt"))

    def test_flipped_payload_fails_checksum(self, tmp_path):
        model = self._trained_seg(tmp_path)
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, {}, str(p))
        blob = bytearray(p.read_bytes())
        blob[-100] ^= 0xFF
        (tmp_path / "x.ckpt").write_bytes(bytes(blob))
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(str(tmp_path / "x.ckpt"))

    def test_future_version_is_mismatch(self, tmp_path):
        model = self._trained_seg(tmp_path)
        p = tmp_path / "m.ckpt"
        save_checkpoint(model, {}, str(p))
        blob = bytearray(p.read_bytes())
        blob[8] = 9
        (tmp_path / "x.ckpt").write_bytes(bytes(blob))
        with pytest.raises(VersionMismatch):
            load_checkpoint(str(tmp_path / "x.ckpt"))

    def test_classifier_checkpoint_roundtrip(self, tmp_path):
        model = CSFECNet(ClsNetConfig.tiny(input_size=32), np.random.default_rng(0))
        model.astype(np.float32)
        p = tmp_path / "c.ckpt"
        save_checkpoint(model, {"epoch": 0}, str(p))
        loaded, state = load_checkpoint(str(p))
        assert isinstance(loaded, CSFECNet)
        assert loaded.config == model.config
        assert state == {"epoch": 0}
