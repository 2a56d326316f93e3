"""Overlay rendering, curve emission, and CAM panel figures."""

from collections import deque

import numpy as np
import pytest

from pmadnet import imageio, viz
from pmadnet.errors import IOFailure, ShapeMismatch
from pmadnet.metrics import MetricsReport


def _component_count(mask: np.ndarray) -> int:
    """Flood-fill count of 4-connected foreground components."""
    m = np.asarray(mask) > 0
    seen = np.zeros_like(m, dtype=bool)
    count = 0
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            if not m[i, j] or seen[i, j]:
                continue
            count += 1
            seen[i, j] = True
            queue = deque([(i, j)])
            while queue:
                r, c = queue.popleft()
                for rr, cc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
                    if (0 <= rr < m.shape[0] and 0 <= cc < m.shape[1]
                            and m[rr, cc] and not seen[rr, cc]):
                        seen[rr, cc] = True
                        queue.append((rr, cc))
    return count


def _gray(h, w, seed=0):
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(h, w))


class TestMaskContour:
    def test_empty_mask_has_no_contour(self):
        assert not viz.mask_contour(np.zeros((6, 6), dtype=np.uint8)).any()

    def test_full_mask_outlines_the_frame(self):
        contour = viz.mask_contour(np.ones((5, 7), dtype=np.uint8))
        expected = np.ones((5, 7), dtype=bool)
        expected[1:-1, 1:-1] = False
        assert np.array_equal(contour, expected)

    def test_block_contour_is_a_ring(self):
        mask = np.zeros((7, 7), dtype=np.uint8)
        mask[2:5, 2:5] = 1
        contour = viz.mask_contour(mask)
        expected = mask.astype(bool).copy()
        expected[3, 3] = False
        assert np.array_equal(contour, expected)

    def test_rejects_non_2d(self):
        with pytest.raises(ShapeMismatch):
            viz.mask_contour(np.zeros((2, 3, 4)))


class TestOverlayRgb:
    def test_empty_mask_is_plain_grayscale(self):
        img = _gray(9, 11)
        rgb = viz.overlay_rgb(img, np.zeros((9, 11), dtype=np.uint8))
        plain = np.repeat(np.round(img * 255.0).astype(np.uint8)[:, :, None],
                          3, axis=2)
        assert np.array_equal(rgb, plain)

    def test_full_mask_tints_every_pixel(self):
        img = _gray(8, 8, seed=3)
        img[0, 0] = 0.0
        img[0, 1] = 1.0
        rgb = viz.overlay_rgb(img, np.ones((8, 8), dtype=np.uint8))
        plain = np.repeat(np.round(img * 255.0).astype(np.uint8)[:, :, None],
                          3, axis=2)
        changed = (rgb != plain).any(axis=2)
        assert changed.all()

    def test_contour_pixels_take_the_exact_contour_colour(self):
        mask = np.zeros((10, 10), dtype=np.uint8)
        mask[2:7, 3:8] = 1
        rgb = viz.overlay_rgb(_gray(10, 10, seed=1), mask)
        contour = viz.mask_contour(mask)
        assert np.array_equal(rgb[contour],
                              np.tile(viz.CONTOUR_RGB, (contour.sum(), 1)))
        pure_red = ((rgb[:, :, 0] == 255) & (rgb[:, :, 1] == 0)
                    & (rgb[:, :, 2] == 0))
        assert np.array_equal(pure_red, contour)

    def test_uint8_image_accepted(self):
        img = np.arange(64, dtype=np.uint8).reshape(8, 8)
        rgb = viz.overlay_rgb(img, np.zeros((8, 8), dtype=np.uint8))
        assert np.array_equal(rgb[:, :, 0], img)

    def test_dims_must_match(self):
        with pytest.raises(ShapeMismatch):
            viz.overlay_rgb(_gray(8, 8), np.zeros((8, 9), dtype=np.uint8))


class TestEmitOverlay:
    @pytest.mark.parametrize("mask_builder,expected", [
        (lambda: (np.indices((8, 8)).sum(axis=0) % 2 == 0).astype(np.uint8),
         32),
        (lambda: np.kron((np.indices((4, 4)).sum(axis=0) % 2 == 0),
                         np.ones((3, 3))).astype(np.uint8), 8),
    ])
    def test_checker_contour_count_matches_component_oracle(
            self, tmp_path, mask_builder, expected):
        mask = mask_builder()
        assert _component_count(mask) == expected
        out = tmp_path / "overlay.png"
        viz.emit_overlay(_gray(*mask.shape, seed=2), mask, str(out))
        arr = imageio.load_image(str(out))
        red = ((arr[:, :, 0] == 1.0) & (arr[:, :, 1] == 0.0)
               & (arr[:, :, 2] == 0.0))
        assert _component_count(red) == expected

    def test_roundtrip_preserves_overlay_bytes(self, tmp_path):
        img = _gray(12, 12, seed=5)
        mask = np.zeros((12, 12), dtype=np.uint8)
        mask[4:9, 2:6] = 1
        out = tmp_path / "o.png"
        viz.emit_overlay(img, mask, str(out))
        arr = imageio.load_image(str(out))
        assert np.array_equal(np.round(arr * 255.0).astype(np.uint8),
                              viz.overlay_rgb(img, mask))

    def test_unwritable_path_raises_iofailure(self, tmp_path):
        with pytest.raises(IOFailure):
            viz.emit_overlay(_gray(4, 4), np.zeros((4, 4), dtype=np.uint8),
                             str(tmp_path / "missing" / "o.png"))


def _reports():
    return [
        MetricsReport(dice=0.50, iou=0.40, pixel_accuracy=0.80,
                      loss_focal=0.70, loss_jaccard=0.60, loss_total=1.30),
        MetricsReport(dice=0.70, iou=0.55, pixel_accuracy=0.90,
                      loss_focal=0.40, loss_jaccard=0.45, loss_total=0.85),
        MetricsReport(dice=0.85, iou=0.74, pixel_accuracy=0.95,
                      loss_focal=0.20, loss_jaccard=0.26, loss_total=0.46),
    ]


class TestEmitCurves:
    def test_csv_table_roundtrips_the_reports(self, tmp_path):
        import csv

        csv_path = tmp_path / "curves.csv"
        viz.emit_curves(_reports(), str(csv_path), str(tmp_path / "c.png"))
        with open(csv_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3
        assert list(rows[0]) == list(viz.CURVE_COLUMNS)
        assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
        assert [float(r["dice"]) for r in rows] == [0.50, 0.70, 0.85]
        assert [float(r["loss_total"]) for r in rows] == [1.30, 0.85, 0.46]
        assert all(float(r["cls_accuracy"]) == 0.0 for r in rows)

    def test_png_is_rendered_and_deterministic(self, tmp_path):
        a_csv, a_png = tmp_path / "a.csv", tmp_path / "a.png"
        b_csv, b_png = tmp_path / "b.csv", tmp_path / "b.png"
        viz.emit_curves(_reports(), str(a_csv), str(a_png))
        viz.emit_curves(_reports(), str(b_csv), str(b_png))
        assert a_png.stat().st_size > 0
        assert a_csv.read_bytes() == b_csv.read_bytes()
        assert a_png.read_bytes() == b_png.read_bytes()

    def test_plain_dicts_are_accepted(self, tmp_path):
        viz.emit_curves([{"dice": 0.5, "loss_total": 1.0}],
                        str(tmp_path / "d.csv"), str(tmp_path / "d.png"))
        text = (tmp_path / "d.csv").read_text()
        assert "0.5" in text

    def test_no_epochs_rejected(self, tmp_path):
        with pytest.raises(ShapeMismatch):
            viz.emit_curves([], str(tmp_path / "x.csv"), str(tmp_path / "x.png"))

    def test_unwritable_csv_raises_iofailure(self, tmp_path):
        with pytest.raises(IOFailure):
            viz.emit_curves(_reports(), str(tmp_path / "nope" / "x.csv"),
                            str(tmp_path / "x.png"))


class TestEmitCamPanel:
    def _panels(self, n):
        rng = np.random.default_rng(9)
        return [(f"epoch {16 * 2 ** i}", rng.uniform(size=(16, 16)),
                 rng.uniform(size=(16, 16))) for i in range(n)]

    def test_four_panel_figure(self, tmp_path):
        out = tmp_path / "panel.png"
        viz.emit_cam_panel(self._panels(4), str(out))
        assert out.stat().st_size > 0

    def test_single_panel_and_determinism(self, tmp_path):
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        panels = self._panels(1)
        viz.emit_cam_panel(panels, str(a))
        viz.emit_cam_panel(panels, str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_empty_panel_list_rejected(self, tmp_path):
        with pytest.raises(ShapeMismatch):
            viz.emit_cam_panel([], str(tmp_path / "p.png"))

    def test_unwritable_path_raises_iofailure(self, tmp_path):
        with pytest.raises(IOFailure):
            viz.emit_cam_panel(self._panels(1),
                               str(tmp_path / "nope" / "p.png"))
