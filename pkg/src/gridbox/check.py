"""Self-check pipelines: encode/decode round trips and gradient probes.

These back the ``encode-check`` and ``loss-check`` CLI commands.  The
round trip builds the raw tensor a perfect predictor would emit for
each record and verifies every owned cell reconstructs its object's
box; the gradient probe compares the analytic loss gradient against
central finite differences on small random instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .anchors import Anchor, assign_best_anchor, split_by_scale
from .decode import RawPrediction, coord_activation, raw_from_targets
from .encode import (
    CH_ANCHOR,
    CH_H,
    CH_OBJ,
    CH_W,
    CH_X,
    CH_Y,
    decode_cell,
    encode_ground_truth,
    multi_grid_cells,
)
from .geometry import Box, GridSpec, default_grids
from .loss import LossConfig, coordinate_weights, total_loss, total_loss_and_grad
from .manifest import Annotation, ImageRecord, clip_annotations


@dataclass
class ObjectRoundTrip:
    image: str
    annotation_index: int
    scale: int
    cells_owned: int
    max_error_px: float


@dataclass
class RoundTripReport:
    tolerance_px: float
    objects: list[ObjectRoundTrip] = field(default_factory=list)
    dropped: int = 0

    @property
    def max_error_px(self) -> float:
        return max((o.max_error_px for o in self.objects), default=0.0)

    @property
    def cell_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for o in self.objects:
            hist[o.cells_owned] = hist.get(o.cells_owned, 0) + 1
        return hist

    @property
    def failures(self) -> list[ObjectRoundTrip]:
        return [o for o in self.objects if o.max_error_px > self.tolerance_px]

    def to_text(self) -> str:
        lines = [
            f"objects checked: {len(self.objects)}   dropped at clipping: {self.dropped}",
            f"max round-trip error: {self.max_error_px:.3e} px "
            f"(tolerance {self.tolerance_px:g})",
            "cells-per-object histogram: "
            + ", ".join(f"{k}:{v}" for k, v in sorted(self.cell_histogram.items())),
        ]
        for o in self.failures:
            lines.append(
                f"  FAIL {o.image} object {o.annotation_index}: "
                f"{o.max_error_px:.3e} px at scale {o.scale}"
            )
        return "\n".join(lines)


def _letterbox_annotations(
    annotations: list[Annotation], src_w: int, src_h: int, out_w: int, out_h: int
) -> list[Annotation]:
    scale = min(out_w / src_w, out_h / src_h)
    new_w = max(1, round(src_w * scale))
    new_h = max(1, round(src_h * scale))
    pad_x = (out_w - new_w) // 2
    pad_y = (out_h - new_h) // 2
    return [
        Annotation(
            Box(a.box.x * scale + pad_x, a.box.y * scale + pad_y,
                a.box.w * scale, a.box.h * scale),
            a.class_id, a.difficult,
        )
        for a in annotations
    ]


def roundtrip_records(
    records: list[ImageRecord],
    anchors: list[Anchor],
    num_classes: int,
    image_size: int = 416,
    strides=(8, 16, 32),
    tolerance_px: float = 1e-4,
    beta: float = 0.25,
) -> RoundTripReport:
    """Encode every record, rebuild the perfect raw tensors, and measure
    how far each owned cell's decoded box lands from the original.

    Records are letterboxed to ``image_size`` square first.  A cell is
    owned by an object when the encoded tensor still carries that
    object's offsets (cells lost to a conflicting object are checked
    against their winner instead).
    """
    grids = default_grids(image_size, image_size, strides)
    anchors_per_scale = split_by_scale(anchors, len(grids))
    report = RoundTripReport(tolerance_px=tolerance_px)

    for record in records:
        mapped = _letterbox_annotations(
            record.annotations, record.width, record.height, image_size, image_size
        )
        kept, dropped = clip_annotations(mapped, image_size, image_size)
        report.dropped += len(dropped)
        targets = encode_ground_truth(kept, grids, anchors_per_scale, num_classes)
        raws = [raw_from_targets(t, beta) for t in targets]

        for ann_idx, ann in enumerate(kept):
            scale, owned, max_err = _check_object(
                ann, grids, anchors_per_scale, targets, raws, beta
            )
            report.objects.append(
                ObjectRoundTrip(record.image, ann_idx, scale, owned, max_err)
            )
    return report


def _check_object(ann, grids, anchors_per_scale, targets, raws, beta):
    flat = [a for group in anchors_per_scale for a in group]
    best = assign_best_anchor(ann.box.w, ann.box.h, flat)
    k = len(anchors_per_scale[0])
    scale, local = best // k, best % k
    grid: GridSpec = grids[scale]
    target = targets[scale]
    raw: RawPrediction = raws[scale]
    anchor = anchors_per_scale[scale][local]

    owned = 0
    max_err = 0.0
    for a in multi_grid_cells(ann.box, grid):
        cell = target.values[a.cell_x, a.cell_y]
        if cell[CH_OBJ] != 1.0 or abs(cell[CH_X] - a.offset_x) > 1e-12 \
                or abs(cell[CH_Y] - a.offset_y) > 1e-12 \
                or cell[CH_ANCHOR + local] != 1.0:
            continue  # lost to a conflicting object
        owned += 1
        v = raw.values[a.cell_x, a.cell_y]
        decoded = decode_cell(
            a.cell_x, a.cell_y,
            coord_activation(v[CH_X], beta), coord_activation(v[CH_Y], beta),
            v[CH_W], v[CH_H], grid, anchor,
        )
        err = max(
            abs(decoded.x - ann.box.x), abs(decoded.y - ann.box.y),
            abs(decoded.w - ann.box.w), abs(decoded.h - ann.box.h),
        )
        max_err = max(max_err, err)
    return scale, owned, max_err


def random_loss_instance(
    rng: np.random.Generator,
    grid_max: int = 4,
    anchors_max: int = 3,
    classes_max: int = 3,
    cell_size: float = 32.0,
):
    """A small, well-conditioned (raw, target, anchors, config) quadruple.

    Raw logits are clipped to a moderate range and edge-cell offset
    channels are kept non-negative so no square-rooted coordinate sits
    near zero, where finite differences lose accuracy.
    """
    cells_x = int(rng.integers(2, grid_max + 1))
    cells_y = int(rng.integers(2, grid_max + 1))
    k = int(rng.integers(1, anchors_max + 1))
    n = int(rng.integers(1, classes_max + 1))
    grid = GridSpec(cell_size, cell_size, cells_x, cells_y)
    anchors = [
        Anchor(float(rng.uniform(8, 64)), float(rng.uniform(8, 64))) for _ in range(k)
    ]
    image_w, image_h = grid.image_w, grid.image_h
    annotations = []
    for _ in range(int(rng.integers(1, 4))):
        w = float(rng.uniform(6, image_w * 0.8))
        h = float(rng.uniform(6, image_h * 0.8))
        x = float(rng.uniform(w / 2 + 1, image_w - w / 2 - 1))
        y = float(rng.uniform(h / 2 + 1, image_h - h / 2 - 1))
        annotations.append(Annotation(Box(x, y, w, h), int(rng.integers(0, n))))
    target = encode_ground_truth(annotations, [grid], [anchors], n)[0]

    values = rng.normal(0.0, 1.0, size=target.values.shape)
    values[:, :, CH_W:CH_H + 1] = np.clip(values[:, :, CH_W:CH_H + 1], -2.0, 2.0)
    values[0, :, CH_X] = np.abs(values[0, :, CH_X])
    values[:, 0, CH_Y] = np.abs(values[:, 0, CH_Y])
    raw = RawPrediction(grid, k, n, values)
    return raw, target, anchors, LossConfig()


def finite_difference_grad(raw, target, anchors, cfg, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the total loss, coordinate weights
    pinned at the evaluation point (the same surface the analytic
    gradient differentiates)."""
    weights = coordinate_weights(raw, target, anchors, cfg)
    base = raw.values
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        for sign, slot in ((+1, 0), (-1, 1)):
            shifted = base.copy()
            shifted[idx] += sign * h
            probe = RawPrediction(raw.grid, raw.num_anchors, raw.num_classes, shifted)
            value = total_loss(probe, target, anchors, cfg, coord_weights=weights).total
            grad[idx] += sign * value
        grad[idx] /= 2 * h
    return grad


def gradient_check(
    instances: int = 100, seed: int = 0, h: float = 1e-5, grid_max: int = 4
) -> float:
    """Max relative gradient error over random instances.

    Relative error per coordinate is |analytic - numeric| divided by
    max(1, |analytic|, |numeric|).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        raw, target, anchors, cfg = random_loss_instance(rng, grid_max)
        _, analytic = total_loss_and_grad(raw, target, anchors, cfg)
        numeric = finite_difference_grad(raw, target, anchors, cfg, h)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst
