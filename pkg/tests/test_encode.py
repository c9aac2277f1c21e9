import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridbox.anchors import Anchor, split_by_scale
from gridbox.encode import (
    CH_OBJ,
    CH_X,
    CH_Y,
    cell_index,
    decode_cell,
    encode_ground_truth,
    forward_transform,
    multi_grid_cells,
)
from gridbox.geometry import Box, GridSpec, default_grids
from gridbox.manifest import Annotation

GRID_13 = GridSpec(32, 32, 13, 13)
UNIT_ANCHOR = Anchor(100, 100)


def test_cell_index_examples():
    assert cell_index(Box(208, 208, 10, 10), GRID_13) == (6, 6)
    assert cell_index(Box(0.5, 0.5, 10, 10), GRID_13) == (0, 0)
    assert cell_index(Box(100, 150, 10, 10), GRID_13) == (3, 4)


def test_cell_index_out_of_bounds():
    with pytest.raises(ValueError):
        cell_index(Box(500, 100, 10, 10), GRID_13)
    with pytest.raises(ValueError):
        cell_index(Box(-1, 100, 10, 10), GRID_13)


def test_forward_transform_examples():
    t_x, t_y, t_w, t_h = forward_transform(Box(208, 208, 100, 100), GRID_13, UNIT_ANCHOR)
    assert t_x == pytest.approx(0.5) and t_y == pytest.approx(0.5)
    assert t_w == 0.0 and t_h == 0.0
    _, _, t_w, _ = forward_transform(Box(100, 100, 120, 50), GRID_13, Anchor(116, 50))
    assert t_w == pytest.approx(math.log(120 / 116))
    assert t_w == pytest.approx(0.03390, abs=5e-6)


def test_multi_grid_nine_cells():
    cells = multi_grid_cells(Box(208, 208, 200, 200), GRID_13)
    assert len(cells) == 9
    center = cells[0]
    assert (center.cell_x, center.cell_y, center.dx, center.dy) == (6, 6, 0, 0)
    assert (center.offset_x, center.offset_y) == (0.5, 0.5)
    right = next(c for c in cells if (c.cell_x, c.cell_y) == (7, 6))
    assert right.offset_x == pytest.approx(-0.5)
    assert right.offset_y == pytest.approx(0.5)


def test_multi_grid_small_box_single_cell():
    # smaller than one cell, mid-cell center
    cells = multi_grid_cells(Box(208, 208, 10, 10), GRID_13)
    assert len(cells) == 1
    assert (cells[0].dx, cells[0].dy) == (0, 0)


def test_multi_grid_corner_stays_in_bounds():
    cells = multi_grid_cells(Box(5, 5, 300, 300), GRID_13)
    assert all(c.cell_x >= 0 and c.cell_y >= 0 for c in cells)
    assert any((c.dx, c.dy) == (0, 0) for c in cells)
    far_corner = multi_grid_cells(Box(413, 413, 300, 300), GRID_13)
    assert all(c.cell_x < 13 and c.cell_y < 13 for c in far_corner)


grids_strategy = st.sampled_from([
    GridSpec(8, 8, 52, 52), GridSpec(16, 16, 26, 26), GridSpec(32, 32, 13, 13),
])


@st.composite
def boxes_on_grid(draw):
    grid = draw(grids_strategy)
    w = draw(st.floats(1.0, grid.image_w, exclude_max=True))
    h = draw(st.floats(1.0, grid.image_h, exclude_max=True))
    x = draw(st.floats(0.0, grid.image_w, exclude_max=True))
    y = draw(st.floats(0.0, grid.image_h, exclude_max=True))
    return Box(x, y, w, h), grid


@given(boxes_on_grid())
@settings(max_examples=300)
def test_assignment_properties(box_grid):
    box, grid = box_grid
    cells = multi_grid_cells(box, grid)
    assert 1 <= len(cells) <= 9
    center = cells[0]
    assert (center.dx, center.dy) == (0, 0)
    assert 0.0 <= center.offset_x < 1.0 and 0.0 <= center.offset_y < 1.0
    anchor = Anchor(box.w, box.h)
    for c in cells:
        assert -1.0 <= c.offset_x <= 2.0 and -1.0 <= c.offset_y <= 2.0
        assert c.cell_x == center.cell_x + c.dx and c.cell_y == center.cell_y + c.dy
        decoded = decode_cell(c.cell_x, c.cell_y, c.offset_x, c.offset_y,
                              0.0, 0.0, grid, anchor)
        assert abs(decoded.x - box.x) < 1e-6
        assert abs(decoded.y - box.y) < 1e-6
        assert abs(decoded.w - box.w) < 1e-6
        assert abs(decoded.h - box.h) < 1e-6


def test_encode_empty():
    grids = default_grids(416, 416)
    anchors = split_by_scale([Anchor(10 * i + 5, 10 * i + 5) for i in range(1, 10)])
    tensors = encode_ground_truth([], grids, anchors, 4)
    assert all(not t.values.any() for t in tensors)
    assert [t.channels for t in tensors] == [12, 12, 12]


def test_encode_single_object_one_scale(nine_anchors):
    grids = default_grids(416, 416)
    anchors = split_by_scale(nine_anchors)
    anns = [Annotation(Box(208, 208, 118, 86), 2)]
    tensors = encode_ground_truth(anns, grids, anchors, 3)
    populated = [len(t.object_cells()) for t in tensors]
    assert sum(1 for n in populated if n > 0) == 1
    assert 1 <= sum(populated) <= 9
    # the (120, 85) anchor is the best match -> scale 1, local anchor 2
    assert populated[1] > 0
    for cx, cy in tensors[1].object_cells():
        cell = tensors[1].cell(cx, cy)
        assert cell.objectness == 1.0
        assert cell.anchor_onehot == (0.0, 0.0, 1.0)
        assert cell.class_onehot == (0.0, 0.0, 1.0)


def test_encode_deterministic(nine_anchors):
    grids = default_grids(416, 416)
    anchors = split_by_scale(nine_anchors)
    anns = [
        Annotation(Box(100.3, 120.7, 55, 44), 0),
        Annotation(Box(300, 210, 180, 150), 1),
        Annotation(Box(60, 380, 24, 18), 2),
    ]
    a = encode_ground_truth(anns, grids, anchors, 3)
    b = encode_ground_truth(anns, grids, anchors, 3)
    for ta, tb in zip(a, b):
        assert np.array_equal(ta.values, tb.values)


def test_encode_disjoint_objects_order_independent(nine_anchors):
    grids = default_grids(416, 416)
    anchors = split_by_scale(nine_anchors)
    anns = [
        Annotation(Box(80, 80, 40, 40), 0),
        Annotation(Box(330, 330, 40, 40), 1),
    ]
    forward = encode_ground_truth(anns, grids, anchors, 2)
    backward = encode_ground_truth(list(reversed(anns)), grids, anchors, 2)
    for ta, tb in zip(forward, backward):
        assert np.array_equal(ta.values, tb.values)


def test_encode_center_owner_wins_conflict():
    grid = GridSpec(32, 32, 13, 13)
    anchor = [[Anchor(50, 50)]]
    big = Annotation(Box(176, 176, 150, 150), 0)    # claims 9 cells around (5, 5)
    small = Annotation(Box(208, 176, 20, 20), 1)    # owns cell (6, 5) by center
    tensors = encode_ground_truth([big, small], [grid], anchor, 2)
    t = tensors[0]
    cell = t.cell(6, 5)
    assert cell.objectness == 1.0
    assert cell.class_onehot == (0.0, 1.0)          # the center owner
    assert cell.offset_x == pytest.approx(0.5)
    # the big object keeps its other cells
    assert t.cell(5, 5).class_onehot == (1.0, 0.0)
    assert len(t.object_cells()) == 9


def test_encode_neighbor_conflict_larger_overlap_wins():
    grid = GridSpec(32, 32, 13, 13)
    anchor = [[Anchor(50, 50)]]
    # both claim (6, 5) as a neighbor; a overlaps it by 32x40, b by 24x30
    a = Annotation(Box(176, 176, 160, 40), 0)
    b = Annotation(Box(240, 176, 80, 30), 1)
    tensors = encode_ground_truth([a, b], [grid], anchor, 2)
    cell = tensors[0].cell(6, 5)
    assert cell.objectness == 1.0
    assert cell.class_onehot == (1.0, 0.0)
    # and deterministically so regardless of insertion order
    flipped = encode_ground_truth([b, a], [grid], anchor, 2)
    assert flipped[0].cell(6, 5).class_onehot == (1.0, 0.0)


def test_encode_rejects_bad_class():
    grid = GridSpec(32, 32, 13, 13)
    with pytest.raises(ValueError):
        encode_ground_truth(
            [Annotation(Box(100, 100, 20, 20), 7)], [grid], [[Anchor(20, 20)]], 3
        )


def test_encode_drops_out_of_image_boxes(nine_anchors, caplog):
    grids = default_grids(416, 416)
    anchors = split_by_scale(nine_anchors)
    anns = [Annotation(Box(-50, 200, 20, 20), 0)]  # clips to nothing
    tensors = encode_ground_truth(anns, grids, anchors, 1)
    assert all(not t.values.any() for t in tensors)


def test_target_tensor_channel_layout(nine_anchors):
    grids = default_grids(416, 416)
    anchors = split_by_scale(nine_anchors)
    anns = [Annotation(Box(208, 208, 118, 86), 0)]
    tensors = encode_ground_truth(anns, grids, anchors, 2)
    t = tensors[1]
    cx, cy = t.object_cells()[0]
    v = t.values[cx, cy]
    assert v[CH_OBJ] == 1.0 and CH_OBJ == 4
    assert -1.0 <= v[CH_X] <= 2.0 and -1.0 <= v[CH_Y] <= 2.0
    assert v.shape == (5 + 3 + 2,)
