"""Axis-aligned box types, grid geometry and IoU arithmetic.

Everything downstream (target encoding, anchor clustering, NMS, mAP)
is built on the three value types defined here.  All coordinates are
continuous 64-bit pixel values; sub-pixel centers are allowed because
the cell-offset transforms divide by the cell size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Box:
    """Rectangle in center+size form: (x, y) is the center in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"box center must be finite, got ({self.x}, {self.y})")
        if not (self.w > 0 and self.h > 0 and math.isfinite(self.w) and math.isfinite(self.h)):
            raise ValueError(f"box size must be positive and finite, got ({self.w}, {self.h})")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class CornerBox:
    """Rectangle in corner form: (x_min, y_min) top-left, (x_max, y_max) bottom-right."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"corners must satisfy x_min < x_max and y_min < y_max, got "
                f"({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class GridSpec:
    """One detection scale: cell size in pixels and cell counts per axis.

    The covered image is exactly ``cells_x * cell_w`` by ``cells_y * cell_h``
    pixels; the two pixel/count meanings of a grid's "size" are kept in
    separate fields on purpose.
    """

    cell_w: float
    cell_h: float
    cells_x: int
    cells_y: int

    def __post_init__(self):
        if not (self.cell_w > 0 and self.cell_h > 0):
            raise ValueError(f"cell size must be positive, got ({self.cell_w}, {self.cell_h})")
        if not (self.cells_x >= 1 and self.cells_y >= 1):
            raise ValueError(f"cell counts must be >= 1, got ({self.cells_x}, {self.cells_y})")

    @property
    def image_w(self) -> float:
        return self.cells_x * self.cell_w

    @property
    def image_h(self) -> float:
        return self.cells_y * self.cell_h

    @classmethod
    def for_image(cls, image_w: int, image_h: int, stride: int) -> "GridSpec":
        """Grid covering an image whose sides are exact multiples of ``stride``."""
        if image_w % stride or image_h % stride:
            raise ValueError(
                f"image {image_w}x{image_h} is not divisible by stride {stride}"
            )
        return cls(float(stride), float(stride), image_w // stride, image_h // stride)


#: Default detection strides, finest first.
DEFAULT_STRIDES = (8, 16, 32)


def default_grids(image_w: int, image_h: int, strides=DEFAULT_STRIDES) -> list[GridSpec]:
    """The standard three-scale grid pyramid for one image size."""
    return [GridSpec.for_image(image_w, image_h, s) for s in strides]


def to_corners(box: Box) -> CornerBox:
    """Center+size form to corner form."""
    return CornerBox(
        box.x - box.w / 2, box.y - box.h / 2,
        box.x + box.w / 2, box.y + box.h / 2,
    )


def from_corners(corners: CornerBox) -> Box:
    """Corner form to center+size form; inverse of :func:`to_corners`."""
    return Box(
        (corners.x_min + corners.x_max) / 2,
        (corners.y_min + corners.y_max) / 2,
        corners.x_max - corners.x_min,
        corners.y_max - corners.y_min,
    )


def iou(a: CornerBox, b: CornerBox) -> float:
    """Intersection over union of two corner boxes, in [0, 1].

    Zero for disjoint boxes; symmetric in its arguments.
    """
    return iou_xyxy(
        a.x_min, a.y_min, a.x_max, a.y_max,
        b.x_min, b.y_min, b.x_max, b.y_max,
    )


def iou_xyxy(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2) -> float:
    """IoU on raw corner coordinates; the scalar kernel every caller shares.

    Keeping a single expression order here makes vectorized and scalar
    call sites agree bit for bit.
    """
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def iou_wh(w_a: float, h_a: float, w_b: float, h_b: float) -> float:
    """IoU of two boxes that share a common center (only sizes matter).

    This is the distance kernel for anchor clustering and best-anchor
    assignment: concentric rectangles overlap by min-width x min-height.
    """
    inter = min(w_a, w_b) * min(h_a, h_b)
    union = w_a * h_a + w_b * h_b - inter
    return inter / union


def intersection_area(a: CornerBox, b: CornerBox) -> float:
    """Raw overlap area of two corner boxes (0 when disjoint)."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def clip_to_image(corners: CornerBox, image_w: float, image_h: float) -> CornerBox | None:
    """Clip a corner box to [0, image_w] x [0, image_h].

    Returns None when nothing with positive area is left.
    """
    x_min = max(corners.x_min, 0.0)
    y_min = max(corners.y_min, 0.0)
    x_max = min(corners.x_max, float(image_w))
    y_max = min(corners.y_max, float(image_h))
    if x_min >= x_max or y_min >= y_max:
        return None
    return CornerBox(x_min, y_min, x_max, y_max)
