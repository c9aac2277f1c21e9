"""Turning raw head tensors into detections.

The x/y offset channels pass through a bounded activation
tanh(beta*z) + sigmoid(beta*z), which maps the real line smoothly onto
(-1, 2) — exactly the offset range the multi-cell encoding produces.
Width/height channels are raw log-ratios, objectness/anchor/class
channels are independent sigmoid logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import Anchor
from .encode import CH_ANCHOR, CH_H, CH_OBJ, CH_W, CH_X, CH_Y, TargetTensor
from .geometry import Box, GridSpec, clip_to_image, from_corners, iou_xyxy, to_corners


def sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def _check_beta(beta: float) -> None:
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")


def coord_activation(z, beta: float = 0.25):
    """Bounded coordinate activation: tanh(beta*z) + sigmoid(beta*z).

    Strictly increasing with asymptotes -1 and 2; equals 0.5 at z = 0.
    ``beta`` stretches the curve horizontally so training does not
    saturate it too quickly.  Accepts scalars or arrays.
    """
    _check_beta(beta)
    bz = np.asarray(z, dtype=np.float64) * beta
    out = np.tanh(bz) + sigmoid(bz)
    if out.ndim == 0:
        return float(out)
    return out


def coord_activation_grad(z, beta: float = 0.25):
    """Derivative of :func:`coord_activation` with respect to z."""
    _check_beta(beta)
    bz = np.asarray(z, dtype=np.float64) * beta
    s = sigmoid(bz)
    out = beta * (1.0 - np.tanh(bz) ** 2 + s * (1.0 - s))
    if out.ndim == 0:
        return float(out)
    return out


def coord_activation_inverse(t, beta: float = 0.25, iters: int = 100):
    """Invert the coordinate activation by bisection.

    Defined for t strictly inside (-1, 2); monotonicity makes the root
    unique.  Values inverted and re-activated agree with the input to
    within floating-point resolution.
    """
    _check_beta(beta)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= -1.0) or np.any(t >= 2.0):
        raise ValueError("activation inverse requires values strictly inside (-1, 2)")
    lo = np.full(t.shape, -4000.0 / beta)
    hi = np.full(t.shape, 4000.0 / beta)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        too_low = coord_activation(mid, beta) < t
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
    out = 0.5 * (lo + hi)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass
class RawPrediction:
    """Unactivated head output for one scale: (cells_x, cells_y, 5 + k + n)."""

    grid: GridSpec
    num_anchors: int
    num_classes: int
    values: np.ndarray

    def __post_init__(self):
        expected = (self.grid.cells_x, self.grid.cells_y, 5 + self.num_anchors + self.num_classes)
        if self.values.shape != expected:
            raise ValueError(f"raw tensor shape {self.values.shape} != {expected}")

    @property
    def channels(self) -> int:
        return 5 + self.num_anchors + self.num_classes


@dataclass(frozen=True)
class Detection:
    """A decoded prediction: box, class, confidence and the anchor used."""

    box: Box
    class_id: int
    score: float
    anchor_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


def decode_predictions(
    raw: RawPrediction,
    anchors: list[Anchor],
    conf_thresh: float = 0.5,
    beta: float = 0.25,
) -> list[Detection]:
    """Decode one scale's raw tensor into confidence-filtered detections.

    Per cell: objectness and per-class probabilities are independent
    sigmoids, the anchor and class are channel argmaxes, and the box is
    reconstructed from the activated offsets and the argmax anchor's
    size.  A cell survives iff objectness * class probability reaches
    ``conf_thresh``; boxes are clipped to the image and dropped if
    clipping leaves nothing.
    """
    if len(anchors) != raw.num_anchors:
        raise ValueError(f"{len(anchors)} anchors for a {raw.num_anchors}-anchor tensor")
    k, n = raw.num_anchors, raw.num_classes
    v = raw.values
    grid = raw.grid

    objectness = sigmoid(v[:, :, CH_OBJ])
    anchor_ids = np.argmax(v[:, :, CH_ANCHOR:CH_ANCHOR + k], axis=2)
    class_logits = v[:, :, CH_ANCHOR + k:]
    class_ids = np.argmax(class_logits, axis=2)
    class_probs = sigmoid(np.take_along_axis(class_logits, class_ids[:, :, None], axis=2))[:, :, 0]
    scores = objectness * class_probs

    keep_x, keep_y = np.nonzero(scores >= conf_thresh)
    if len(keep_x) == 0:
        return []

    t_x = coord_activation(v[keep_x, keep_y, CH_X], beta)
    t_y = coord_activation(v[keep_x, keep_y, CH_Y], beta)
    anchor_w = np.array([anchors[a].w for a in anchor_ids[keep_x, keep_y]])
    anchor_h = np.array([anchors[a].h for a in anchor_ids[keep_x, keep_y]])
    centers_x = (keep_x + t_x) * grid.cell_w
    centers_y = (keep_y + t_y) * grid.cell_h
    widths = anchor_w * np.exp(v[keep_x, keep_y, CH_W])
    heights = anchor_h * np.exp(v[keep_x, keep_y, CH_H])

    detections = []
    for i in range(len(keep_x)):
        cx, cy = keep_x[i], keep_y[i]
        raw_box = Box(centers_x[i], centers_y[i], widths[i], heights[i])
        clipped = clip_to_image(to_corners(raw_box), grid.image_w, grid.image_h)
        if clipped is None:
            continue
        detections.append(
            Detection(
                from_corners(clipped),
                int(class_ids[cx, cy]),
                float(scores[cx, cy]),
                int(anchor_ids[cx, cy]),
            )
        )
    return detections


def decode_all_scales(
    raws: list[RawPrediction],
    anchors_per_scale: list[list[Anchor]],
    conf_thresh: float = 0.5,
    beta: float = 0.25,
) -> list[Detection]:
    """Decode several scales and concatenate their detections."""
    out = []
    for raw, anchors in zip(raws, anchors_per_scale):
        out.extend(decode_predictions(raw, anchors, conf_thresh, beta))
    return out


def nms(detections: list[Detection], iou_thresh: float = 0.45) -> list[Detection]:
    """Greedy per-class non-max suppression.

    Detections are visited in descending score (ties keep input order);
    one is suppressed iff its IoU with an already-kept detection of the
    same class exceeds ``iou_thresh``.  Output preserves the visit order
    of survivors, so the result is deterministic.
    """
    if not detections:
        return []
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    corners = np.array(
        [
            (c.x_min, c.y_min, c.x_max, c.y_max)
            for c in (to_corners(d.box) for d in detections)
        ]
    )
    areas = (corners[:, 2] - corners[:, 0]) * (corners[:, 3] - corners[:, 1])
    kept_by_class: dict[int, list[int]] = {}
    out = []
    for i in order:
        kept = kept_by_class.setdefault(detections[i].class_id, [])
        if kept:
            k = np.array(kept)
            iw = np.minimum(corners[i, 2], corners[k, 2]) - np.maximum(corners[i, 0], corners[k, 0])
            ih = np.minimum(corners[i, 3], corners[k, 3]) - np.maximum(corners[i, 1], corners[k, 1])
            inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
            union = areas[i] + areas[k] - inter
            if np.any(inter / union > iou_thresh):
                continue
        kept.append(i)
        out.append(detections[i])
    return out


def raw_from_targets(
    target: TargetTensor, beta: float = 0.25, logit_magnitude: float = 1e4
) -> RawPrediction:
    """Build the raw tensor a perfect predictor would emit for a target.

    Offset channels are pushed through the activation's inverse, log
    sizes copy over directly, and every probability channel is saturated
    at +/- ``logit_magnitude``.  Decoding the result reproduces each
    encoded box to within numerical precision — the library's end-to-end
    self check.

    An offset of exactly -1 (a center sitting precisely on a cell
    boundary, seen from the cell below) is unreachable by the open-range
    activation; such offsets are nudged a hair inside, costing well
    under a hundredth of a pixel.
    """
    big = float(logit_magnitude)
    eps = 1e-7
    k = target.num_anchors
    values = np.full(target.values.shape, 0.0, dtype=np.float64)
    values[:, :, CH_OBJ:] = -big
    for cx, cy in target.object_cells():
        t = target.values[cx, cy]
        values[cx, cy, CH_X] = coord_activation_inverse(
            np.clip(t[CH_X], -1.0 + eps, 2.0 - eps), beta)
        values[cx, cy, CH_Y] = coord_activation_inverse(
            np.clip(t[CH_Y], -1.0 + eps, 2.0 - eps), beta)
        values[cx, cy, CH_W] = t[CH_W]
        values[cx, cy, CH_H] = t[CH_H]
        values[cx, cy, CH_OBJ] = big
        values[cx, cy, CH_ANCHOR:] = np.where(t[CH_ANCHOR:] > 0, big, -big)
    return RawPrediction(target.grid, target.num_anchors, target.num_classes, values)
