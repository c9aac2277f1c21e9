"""Ground-truth encoding into dense per-scale target tensors.

An object is written not only into the grid cell holding its center but
also into any of the eight surrounding cells whose own center point
falls strictly inside the object's box.  Every assigned cell stores an
x/y offset relative to *its* cell origin, so each cell independently
reconstructs the identical box; offsets therefore live in [-1, 2]
instead of the center cell's [0, 1).

Tensor channel layout, per cell: [offset_x, offset_y, log_w, log_h,
objectness, k anchor flags, n class flags].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .anchors import Anchor, assign_best_anchor
from .geometry import Box, CornerBox, GridSpec, intersection_area, to_corners
from .manifest import Annotation, clip_annotations

log = logging.getLogger(__name__)

# channel indices
CH_X = 0
CH_Y = 1
CH_W = 2
CH_H = 3
CH_OBJ = 4
CH_ANCHOR = 5  # anchor flags start here; class flags follow


@dataclass(frozen=True)
class CellAssignment:
    """One (cell, offset) pair that reconstructs an object's center.

    ``dx``/``dy`` is the cell's displacement from the center-owning cell,
    each in {-1, 0, 1}; the stored offsets satisfy
    ``(cell_x + offset_x) * cell_w == x`` and likewise for y.
    """

    cell_x: int
    cell_y: int
    dx: int
    dy: int
    offset_x: float
    offset_y: float


@dataclass(frozen=True)
class CellTarget:
    """Decoded view of one cell of a target tensor."""

    offset_x: float
    offset_y: float
    log_w: float
    log_h: float
    objectness: float
    anchor_onehot: tuple[float, ...]
    class_onehot: tuple[float, ...]


@dataclass
class TargetTensor:
    """Dense ground-truth tensor for one scale: (cells_x, cells_y, 5 + k + n)."""

    grid: GridSpec
    num_anchors: int
    num_classes: int
    values: np.ndarray

    def __post_init__(self):
        expected = (self.grid.cells_x, self.grid.cells_y, 5 + self.num_anchors + self.num_classes)
        if self.values.shape != expected:
            raise ValueError(f"target tensor shape {self.values.shape} != {expected}")

    @classmethod
    def zeros(cls, grid: GridSpec, num_anchors: int, num_classes: int) -> "TargetTensor":
        shape = (grid.cells_x, grid.cells_y, 5 + num_anchors + num_classes)
        return cls(grid, num_anchors, num_classes, np.zeros(shape, dtype=np.float64))

    @property
    def channels(self) -> int:
        return 5 + self.num_anchors + self.num_classes

    def cell(self, cell_x: int, cell_y: int) -> CellTarget:
        v = self.values[cell_x, cell_y]
        k = self.num_anchors
        return CellTarget(
            v[CH_X], v[CH_Y], v[CH_W], v[CH_H], v[CH_OBJ],
            tuple(v[CH_ANCHOR:CH_ANCHOR + k]),
            tuple(v[CH_ANCHOR + k:]),
        )

    def object_cells(self) -> list[tuple[int, int]]:
        xs, ys = np.nonzero(self.values[:, :, CH_OBJ])
        return list(zip(xs.tolist(), ys.tolist()))


def cell_index(box: Box, grid: GridSpec) -> tuple[int, int]:
    """Grid cell holding the box center: floor of center / cell size."""
    cx = math.floor(box.x / grid.cell_w)
    cy = math.floor(box.y / grid.cell_h)
    if not (0 <= cx < grid.cells_x and 0 <= cy < grid.cells_y):
        raise ValueError(
            f"box center ({box.x}, {box.y}) is outside the "
            f"{grid.image_w:g}x{grid.image_h:g} image"
        )
    return cx, cy


def forward_transform(box: Box, grid: GridSpec, anchor: Anchor) -> tuple[float, float, float, float]:
    """Rescale a box to cell-relative offsets and anchor log-ratios.

    Returns (t_x, t_y, t_w, t_h) with t_x, t_y in [0, 1): the fractional
    position of the center inside its cell, and t_w = log(w / anchor_w).
    """
    t_x = box.x / grid.cell_w - math.floor(box.x / grid.cell_w)
    t_y = box.y / grid.cell_h - math.floor(box.y / grid.cell_h)
    t_w = math.log(box.w / anchor.w)
    t_h = math.log(box.h / anchor.h)
    return t_x, t_y, t_w, t_h


def decode_cell(
    cell_x: int, cell_y: int,
    offset_x: float, offset_y: float,
    log_w: float, log_h: float,
    grid: GridSpec, anchor: Anchor,
) -> Box:
    """Reconstruct a box from one cell's stored values (inverse transform)."""
    return Box(
        (cell_x + offset_x) * grid.cell_w,
        (cell_y + offset_y) * grid.cell_h,
        anchor.w * math.exp(log_w),
        anchor.h * math.exp(log_h),
    )


def multi_grid_cells(box: Box, grid: GridSpec) -> list[CellAssignment]:
    """All cells assigned to a box: the center cell plus eligible neighbors.

    A neighbor cell (displacement dx, dy from the center cell, each in
    {-1, 0, 1}) is eligible iff it lies inside the grid and its own
    geometric center falls strictly inside the box.  Small boxes thus
    collapse to a single cell while large ones fill all nine.  The center
    cell comes first; every assignment stores offset = t - d so each
    decodes to the identical center.
    """
    cx, cy = cell_index(box, grid)
    t_x = box.x / grid.cell_w - cx
    t_y = box.y / grid.cell_h - cy
    corners = to_corners(box)
    out = [CellAssignment(cx, cy, 0, 0, t_x, t_y)]
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            nx, ny = cx + dx, cy + dy
            if not (0 <= nx < grid.cells_x and 0 <= ny < grid.cells_y):
                continue
            px = (nx + 0.5) * grid.cell_w
            py = (ny + 0.5) * grid.cell_h
            if corners.x_min < px < corners.x_max and corners.y_min < py < corners.y_max:
                out.append(CellAssignment(nx, ny, dx, dy, t_x - dx, t_y - dy))
    return out


def _cell_rect(cell_x: int, cell_y: int, grid: GridSpec) -> CornerBox:
    return CornerBox(
        cell_x * grid.cell_w, cell_y * grid.cell_h,
        (cell_x + 1) * grid.cell_w, (cell_y + 1) * grid.cell_h,
    )


def encode_ground_truth(
    annotations: list[Annotation],
    grids: list[GridSpec],
    anchors_per_scale: list[list[Anchor]],
    num_classes: int,
) -> list[TargetTensor]:
    """Encode annotations into one target tensor per scale.

    Each object goes to the single scale owning its best-IoU anchor
    (anchors are flattened in scale order for the argmax).  When two
    objects claim one cell, the center owner wins; among neighbor-only
    claims the larger box-cell overlap wins, then the lower annotation
    index.  Boxes are clipped to the image first and dropped (with a
    warning) if almost nothing remains.
    """
    if len(grids) != len(anchors_per_scale):
        raise ValueError(
            f"{len(grids)} grids but {len(anchors_per_scale)} anchor groups"
        )
    image_w, image_h = grids[0].image_w, grids[0].image_h
    for g in grids[1:]:
        if (g.image_w, g.image_h) != (image_w, image_h):
            raise ValueError("all grids must cover the same image size")
    flat_anchors = [a for group in anchors_per_scale for a in group]
    group_sizes = [len(g) for g in anchors_per_scale]

    kept, dropped = clip_annotations(annotations, image_w, image_h)
    for ann in dropped:
        log.warning("dropping annotation with sub-pixel clipped area: %s", ann)

    tensors = [
        TargetTensor.zeros(grid, len(group), num_classes)
        for grid, group in zip(grids, anchors_per_scale)
    ]
    # cell -> (priority, annotation payload); higher priority tuple wins
    claims: list[dict[tuple[int, int], tuple]] = [{} for _ in grids]

    for idx, ann in enumerate(kept):
        if not 0 <= ann.class_id < num_classes:
            raise ValueError(f"class_id {ann.class_id} out of range [0, {num_classes})")
        best = assign_best_anchor(ann.box.w, ann.box.h, flat_anchors)
        scale, local_anchor = _locate_anchor(best, group_sizes)
        grid = grids[scale]
        anchor = anchors_per_scale[scale][local_anchor]
        _, _, t_w, t_h = forward_transform(ann.box, grid, anchor)
        box_corners = to_corners(ann.box)
        for a in multi_grid_cells(ann.box, grid):
            overlap = intersection_area(box_corners, _cell_rect(a.cell_x, a.cell_y, grid))
            priority = (a.dx == 0 and a.dy == 0, overlap, -idx)
            key = (a.cell_x, a.cell_y)
            current = claims[scale].get(key)
            if current is None or priority > current[0]:
                claims[scale][key] = (priority, a, t_w, t_h, local_anchor, ann.class_id)

    for scale, cell_claims in enumerate(claims):
        tensor = tensors[scale]
        k = tensor.num_anchors
        for (cx, cy), (_, a, t_w, t_h, anchor_id, class_id) in cell_claims.items():
            v = tensor.values[cx, cy]
            v[CH_X] = a.offset_x
            v[CH_Y] = a.offset_y
            v[CH_W] = t_w
            v[CH_H] = t_h
            v[CH_OBJ] = 1.0
            v[CH_ANCHOR + anchor_id] = 1.0
            v[CH_ANCHOR + k + class_id] = 1.0
    return tensors


def _locate_anchor(flat_index: int, group_sizes: list[int]) -> tuple[int, int]:
    for scale, size in enumerate(group_sizes):
        if flat_index < size:
            return scale, flat_index
        flat_index -= size
    raise IndexError("anchor index out of range")
