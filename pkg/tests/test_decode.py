import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridbox.anchors import Anchor, split_by_scale
from gridbox.decode import (
    CH_OBJ,
    Detection,
    RawPrediction,
    coord_activation,
    coord_activation_grad,
    coord_activation_inverse,
    decode_all_scales,
    decode_predictions,
    nms,
    raw_from_targets,
)
from gridbox.encode import encode_ground_truth
from gridbox.geometry import Box, GridSpec, default_grids, iou, to_corners
from gridbox.manifest import Annotation


def brute_force_nms(detections, iou_thresh):
    """Reference: plain greedy loop with scalar IoU calls."""
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept = []
    for i in order:
        d = detections[i]
        suppressed = False
        for k in kept:
            if k.class_id != d.class_id:
                continue
            if iou(to_corners(d.box), to_corners(k.box)) > iou_thresh:
                suppressed = True
                break
        if not suppressed:
            kept.append(d)
    return kept


def random_detections(rng, n, classes=3, extent=200.0):
    out = []
    for _ in range(n):
        w = float(rng.uniform(5, 80))
        h = float(rng.uniform(5, 80))
        x = float(rng.uniform(w / 2, extent - w / 2))
        y = float(rng.uniform(h / 2, extent - h / 2))
        out.append(Detection(Box(x, y, w, h), int(rng.integers(0, classes)),
                             float(rng.uniform(0.01, 1.0))))
    return out


class TestCoordActivation:
    def test_zero_point(self):
        assert coord_activation(0.0) == 0.5
        assert coord_activation(0.0, beta=1.0) == 0.5

    def test_asymptotes(self):
        assert coord_activation(1e6, 0.25) == pytest.approx(2.0, abs=1e-12)
        assert coord_activation(-1e6, 0.25) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_value(self):
        expected = math.tanh(0.25) + 1 / (1 + math.exp(-0.25))
        assert coord_activation(1.0, 0.25) == pytest.approx(expected, rel=1e-12)
        assert coord_activation(1.0, 0.25) == pytest.approx(0.80710, abs=5e-6)

    def test_strictly_inside_and_monotone(self):
        z = np.linspace(-100, 100, 100_000)
        t = coord_activation(z, 0.25)
        assert np.all(t > -1.0) and np.all(t < 2.0)
        assert np.all(np.diff(t) > 0)

    def test_gradient_matches_finite_differences(self):
        z = np.linspace(-30, 30, 101)
        h = 1e-6
        numeric = (coord_activation(z + h, 0.25) - coord_activation(z - h, 0.25)) / (2 * h)
        assert np.allclose(coord_activation_grad(z, 0.25), numeric, atol=1e-9)

    def test_beta_validated(self):
        with pytest.raises(ValueError):
            coord_activation(1.0, beta=0.0)
        with pytest.raises(ValueError):
            coord_activation(1.0, beta=1.5)

    @given(st.floats(-0.999, 1.999), st.sampled_from([0.1, 0.25, 0.5, 1.0]))
    def test_inverse_round_trip(self, t, beta):
        z = coord_activation_inverse(t, beta)
        assert coord_activation(z, beta) == pytest.approx(t, abs=1e-10)

    def test_inverse_domain(self):
        with pytest.raises(ValueError):
            coord_activation_inverse(2.0)
        with pytest.raises(ValueError):
            coord_activation_inverse(-1.0)


class TestDecode:
    def test_all_negative_objectness_yields_nothing(self):
        grid = GridSpec(32, 32, 4, 4)
        values = np.zeros((4, 4, 5 + 2 + 3))
        values[:, :, CH_OBJ] = -1e6
        raw = RawPrediction(grid, 2, 3, values)
        assert decode_predictions(raw, [Anchor(20, 20), Anchor(60, 60)]) == []

    def test_perfect_raw_round_trip(self, nine_anchors):
        grids = default_grids(416, 416)
        groups = split_by_scale(nine_anchors)
        anns = [
            Annotation(Box(208.3, 207.6, 118, 86), 1),
            Annotation(Box(77.25, 340.5, 24.5, 19.75), 0),
        ]
        targets = encode_ground_truth(anns, grids, groups, 2)
        raws = [raw_from_targets(t) for t in targets]
        dets = decode_all_scales(raws, groups, 0.5)
        kept = nms(dets, 0.45)
        assert len(kept) == 2
        for ann in anns:
            match = min(kept, key=lambda d: abs(d.box.x - ann.box.x))
            assert match.class_id == ann.class_id
            assert abs(match.box.x - ann.box.x) < 1e-4
            assert abs(match.box.y - ann.box.y) < 1e-4
            assert abs(match.box.w - ann.box.w) < 1e-4
            assert abs(match.box.h - ann.box.h) < 1e-4

    def test_redundant_cells_agree(self, nine_anchors):
        grids = default_grids(416, 416)
        groups = split_by_scale(nine_anchors)
        anns = [Annotation(Box(208, 208, 200, 190), 0)]
        targets = encode_ground_truth(anns, grids, groups, 1)
        raws = [raw_from_targets(t) for t in targets]
        dets = decode_all_scales(raws, groups, 0.5)
        assert len(dets) == 9
        for i in range(len(dets)):
            for j in range(i + 1, len(dets)):
                assert iou(to_corners(dets[i].box), to_corners(dets[j].box)) >= 0.99

    def test_score_monotone_in_objectness(self):
        rng = np.random.default_rng(3)
        grid = GridSpec(32, 32, 4, 4)
        values = rng.normal(0, 1, size=(4, 4, 5 + 2 + 2))
        raw = RawPrediction(grid, 2, 2, values.copy())
        anchors = [Anchor(30, 30), Anchor(80, 80)]
        before = decode_predictions(raw, anchors, conf_thresh=0.3)
        boosted = values.copy()
        boosted[:, :, CH_OBJ] += 3.0
        after = decode_predictions(RawPrediction(grid, 2, 2, boosted), anchors, 0.3)
        assert len(after) >= len(before)

    def test_boxes_clipped_to_image(self):
        grid = GridSpec(32, 32, 4, 4)
        values = np.zeros((4, 4, 5 + 1 + 1))
        values[0, 0, :] = [-50.0, -50.0, 3.0, 3.0, 50.0, 50.0, 50.0]
        raw = RawPrediction(grid, 1, 1, values)
        dets = decode_predictions(raw, [Anchor(40, 40)], 0.5)
        assert len(dets) == 1
        c = to_corners(dets[0].box)
        assert c.x_min >= 0 and c.y_min >= 0
        assert c.x_max <= grid.image_w and c.y_max <= grid.image_h

    def test_anchor_count_mismatch(self):
        grid = GridSpec(32, 32, 4, 4)
        raw = RawPrediction(grid, 2, 1, np.zeros((4, 4, 8)))
        with pytest.raises(ValueError):
            decode_predictions(raw, [Anchor(10, 10)])


class TestNms:
    def test_same_class_suppression(self):
        a = Detection(Box(50, 50, 40, 40), 0, 0.9)
        b = Detection(Box(60, 50, 40, 40), 0, 0.8)  # IoU 30/50 = 0.6 > 0.45
        assert iou(to_corners(a.box), to_corners(b.box)) == pytest.approx(0.6)
        assert nms([a, b], 0.45) == [a]
        assert nms([b, a], 0.45) == [a]

    def test_disjoint_survive(self):
        a = Detection(Box(20, 20, 20, 20), 0, 0.9)
        b = Detection(Box(100, 100, 20, 20), 0, 0.8)
        assert nms([a, b], 0.45) == [a, b]

    def test_classes_do_not_suppress_each_other(self):
        a = Detection(Box(50, 50, 40, 40), 0, 0.9)
        b = Detection(Box(50, 50, 40, 40), 1, 0.8)
        assert nms([a, b], 0.45) == [a, b]

    def test_empty(self):
        assert nms([], 0.5) == []

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            dets = random_detections(rng, int(rng.integers(0, 51)))
            thresh = float(rng.uniform(0.1, 0.9))
            assert nms(dets, thresh) == brute_force_nms(dets, thresh)

    def test_tie_scores_keep_input_order(self):
        a = Detection(Box(50, 50, 40, 40), 0, 0.7)
        b = Detection(Box(52, 50, 40, 40), 0, 0.7)
        assert nms([a, b], 0.3) == [a]
        assert nms([b, a], 0.3) == [b]


def test_raw_tensor_shape_validated():
    with pytest.raises(ValueError):
        RawPrediction(GridSpec(32, 32, 4, 4), 2, 2, np.zeros((4, 4, 5)))


def test_detection_score_validated():
    with pytest.raises(ValueError):
        Detection(Box(10, 10, 5, 5), 0, 1.5)
