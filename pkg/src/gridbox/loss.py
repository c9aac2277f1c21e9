"""The four-part detection loss and its analytic gradient.

Class, anchor and objectness terms are binary cross-entropies on
sigmoid logits.  The coordinate term compares square-rooted
image-normalized box coordinates, weighted per cell by
-lambda * log(IoU) between the predicted and target boxes, so poor
boxes are penalized sharply while perfect ones contribute nothing.

The IoU weight acts as a constant coefficient within a step: gradients
do not flow through it.  Every evaluation function accepts a
``coord_weights`` override so callers (and gradient checkers) can pin
the coefficients computed at a reference point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import Anchor
from .decode import RawPrediction, coord_activation, coord_activation_grad, sigmoid
from .encode import CH_ANCHOR, CH_H, CH_OBJ, CH_W, CH_X, CH_Y, TargetTensor
from .geometry import iou_xyxy


@dataclass
class LossConfig:
    coord_weight: float = 1.0   # lambda multiplying the -log(IoU) coefficient
    beta: float = 0.25          # coordinate activation slope
    iou_floor: float = 1e-4     # clamp inside the log, removes the IoU=0 singularity

    def __post_init__(self):
        if self.coord_weight <= 0:
            raise ValueError(f"coord_weight must be > 0, got {self.coord_weight}")
        if not 0 < self.iou_floor < 1:
            raise ValueError(f"iou_floor must be in (0, 1), got {self.iou_floor}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")


@dataclass
class LossBreakdown:
    class_loss: float
    anchor_loss: float
    coord_loss: float
    obj_loss: float
    total: float


def _softplus(x):
    return np.logaddexp(0.0, x)


def _check_shapes(raw: RawPrediction, target: TargetTensor) -> None:
    if raw.values.shape != target.values.shape:
        raise ValueError(
            f"raw shape {raw.values.shape} does not match target shape {target.values.shape}"
        )


def _object_mask(target: TargetTensor) -> np.ndarray:
    return target.values[:, :, CH_OBJ] > 0


def class_loss(raw: RawPrediction, target: TargetTensor, batch_size: int = 1) -> float:
    """BCE over the class channels of cells labeled with an object."""
    _check_shapes(raw, target)
    obj = _object_mask(target)
    start = CH_ANCHOR + target.num_anchors
    v = raw.values[obj][:, start:]
    y = target.values[obj][:, start:]
    return float(np.sum(_softplus(v) - y * v)) / batch_size


def anchor_loss(raw: RawPrediction, target: TargetTensor, batch_size: int = 1) -> float:
    """BCE over the anchor-choice channels of cells labeled with an object."""
    _check_shapes(raw, target)
    obj = _object_mask(target)
    stop = CH_ANCHOR + target.num_anchors
    v = raw.values[obj][:, CH_ANCHOR:stop]
    y = target.values[obj][:, CH_ANCHOR:stop]
    return float(np.sum(_softplus(v) - y * v)) / batch_size


def objectness_loss(raw: RawPrediction, target: TargetTensor, batch_size: int = 1) -> float:
    """Confidence BCE: object cells on channel 4 only; empty cells push
    every channel from 4 onward (objectness, anchors, classes) to zero."""
    _check_shapes(raw, target)
    obj = _object_mask(target)
    v_obj = raw.values[obj][:, CH_OBJ]
    v_noobj = raw.values[~obj][:, CH_OBJ:]
    return float(np.sum(_softplus(-v_obj)) + np.sum(_softplus(v_noobj))) / batch_size


def _cell_boxes(raw, target, anchors, beta):
    """Per object cell: predicted and target boxes plus chain-rule pieces.

    Both boxes regress against the cell's assigned anchor; returns
    center-form coordinate arrays in pixels.
    """
    obj_x, obj_y = np.nonzero(_object_mask(target))
    t = target.values[obj_x, obj_y]
    v = raw.values[obj_x, obj_y]
    k = target.num_anchors
    anchor_ids = np.argmax(t[:, CH_ANCHOR:CH_ANCHOR + k], axis=1)
    a_w = np.array([anchors[i].w for i in anchor_ids])
    a_h = np.array([anchors[i].h for i in anchor_ids])
    grid = target.grid

    tgt = np.stack(
        [
            (obj_x + t[:, CH_X]) * grid.cell_w,
            (obj_y + t[:, CH_Y]) * grid.cell_h,
            a_w * np.exp(t[:, CH_W]),
            a_h * np.exp(t[:, CH_H]),
        ],
        axis=1,
    )
    pred = np.stack(
        [
            (obj_x + coord_activation(v[:, CH_X], beta)) * grid.cell_w,
            (obj_y + coord_activation(v[:, CH_Y], beta)) * grid.cell_h,
            a_w * np.exp(v[:, CH_W]),
            a_h * np.exp(v[:, CH_H]),
        ],
        axis=1,
    )
    return obj_x, obj_y, tgt, pred


def _pairwise_iou_centerform(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(len(a))
    for i in range(len(a)):
        ax, ay, aw, ah = a[i]
        bx, by, bw, bh = b[i]
        out[i] = iou_xyxy(
            ax - aw / 2, ay - ah / 2, ax + aw / 2, ay + ah / 2,
            bx - bw / 2, by - bh / 2, bx + bw / 2, by + bh / 2,
        )
    return out


def coordinate_weights(
    raw: RawPrediction, target: TargetTensor, anchors: list[Anchor], cfg: LossConfig
) -> np.ndarray:
    """Per-cell coordinate coefficients -lambda * log(IoU), zero off-object.

    The IoU compares the box decoded from the raw values against the box
    decoded from the target, clamped to [iou_floor, 1] before the log.
    """
    _check_shapes(raw, target)
    weights = np.zeros((target.grid.cells_x, target.grid.cells_y))
    obj_x, obj_y, tgt, pred = _cell_boxes(raw, target, anchors, cfg.beta)
    if len(obj_x) == 0:
        return weights
    iou = np.clip(_pairwise_iou_centerform(pred, tgt), cfg.iou_floor, 1.0)
    weights[obj_x, obj_y] = -cfg.coord_weight * np.log(iou)
    return weights


def _sqrt_terms(tgt, pred, image_w, image_h):
    """Square roots of image-normalized coordinates for both boxes.

    Predicted centers can stray slightly outside the image; their
    normalized values are floored at zero so the root stays real.
    """
    norm = np.array([image_w, image_h, image_w, image_h])
    s_tgt = np.sqrt(tgt / norm)
    s_pred = np.sqrt(np.maximum(pred / norm, 0.0))
    return s_tgt, s_pred


def coord_loss(
    raw: RawPrediction,
    target: TargetTensor,
    anchors: list[Anchor],
    cfg: LossConfig,
    batch_size: int = 1,
    coord_weights: np.ndarray | None = None,
) -> float:
    """IoU-weighted squared error of square-rooted normalized coordinates."""
    _check_shapes(raw, target)
    obj_x, obj_y, tgt, pred = _cell_boxes(raw, target, anchors, cfg.beta)
    if len(obj_x) == 0:
        return 0.0
    if coord_weights is None:
        coord_weights = coordinate_weights(raw, target, anchors, cfg)
    s_tgt, s_pred = _sqrt_terms(tgt, pred, target.grid.image_w, target.grid.image_h)
    sse = np.sum((s_tgt - s_pred) ** 2, axis=1)
    return float(np.sum(coord_weights[obj_x, obj_y] * sse)) / batch_size


def total_loss(
    raw: RawPrediction,
    target: TargetTensor,
    anchors: list[Anchor],
    cfg: LossConfig,
    batch_size: int = 1,
    coord_weights: np.ndarray | None = None,
) -> LossBreakdown:
    """All four loss parts; total is their exact float sum."""
    c = class_loss(raw, target, batch_size)
    a = anchor_loss(raw, target, batch_size)
    r = coord_loss(raw, target, anchors, cfg, batch_size, coord_weights)
    o = objectness_loss(raw, target, batch_size)
    return LossBreakdown(c, a, r, o, c + a + r + o)


def total_loss_and_grad(
    raw: RawPrediction,
    target: TargetTensor,
    anchors: list[Anchor],
    cfg: LossConfig,
    batch_size: int = 1,
) -> tuple[LossBreakdown, np.ndarray]:
    """Loss breakdown plus d(total)/d(raw value) for every tensor entry.

    The coordinate coefficients are computed once from ``raw`` and then
    held fixed, so the gradient is exact for the loss surface with those
    coefficients pinned (the same convention a training step uses).
    Raises on any non-finite result, naming the offending cell.
    """
    _check_shapes(raw, target)
    weights = coordinate_weights(raw, target, anchors, cfg)
    breakdown = total_loss(raw, target, anchors, cfg, batch_size, weights)

    v = raw.values
    t = target.values
    grad = np.zeros_like(v)
    obj = _object_mask(target)
    k = target.num_anchors

    # BCE channels: d/dv = sigmoid(v) - y on their respective masks
    grad[obj, CH_ANCHOR:] = sigmoid(v[obj][:, CH_ANCHOR:]) - t[obj][:, CH_ANCHOR:]
    grad[obj, CH_OBJ] = sigmoid(v[obj][:, CH_OBJ]) - 1.0
    grad[~obj, CH_OBJ:] = sigmoid(v[~obj][:, CH_OBJ:])

    obj_x, obj_y, tgt, pred = _cell_boxes(raw, target, anchors, cfg.beta)
    if len(obj_x):
        grid = target.grid
        s_tgt, s_pred = _sqrt_terms(tgt, pred, grid.image_w, grid.image_h)
        w_cell = weights[obj_x, obj_y]
        diff = s_pred - s_tgt  # d(sse)/d(s_pred) = 2*diff
        norm = np.array([grid.image_w, grid.image_h, grid.image_w, grid.image_h])
        pred_norm = pred / norm
        # centers: d(pred_norm)/dz = (cell/image) * activation'(z); zero where clamped
        safe = s_pred[:, 0] > 0
        grad[obj_x, obj_y, CH_X] = np.where(
            safe,
            w_cell * diff[:, 0] / np.where(safe, s_pred[:, 0], 1.0)
            * (grid.cell_w / grid.image_w)
            * coord_activation_grad(v[obj_x, obj_y, CH_X], cfg.beta),
            0.0,
        )
        safe = s_pred[:, 1] > 0
        grad[obj_x, obj_y, CH_Y] = np.where(
            safe,
            w_cell * diff[:, 1] / np.where(safe, s_pred[:, 1], 1.0)
            * (grid.cell_h / grid.image_h)
            * coord_activation_grad(v[obj_x, obj_y, CH_Y], cfg.beta),
            0.0,
        )
        # sizes: d(pred_norm)/dz = pred_norm, so the chain collapses to diff * s_pred
        grad[obj_x, obj_y, CH_W] = w_cell * diff[:, 2] * s_pred[:, 2]
        grad[obj_x, obj_y, CH_H] = w_cell * diff[:, 3] * s_pred[:, 3]

    grad /= batch_size

    if not np.isfinite(grad).all():
        bad = np.argwhere(~np.isfinite(grad))[0]
        raise FloatingPointError(
            f"non-finite gradient at cell ({bad[0]}, {bad[1]}) channel {bad[2]}"
        )
    if not np.isfinite(breakdown.total):
        raise FloatingPointError("non-finite loss total")
    return breakdown, grad


def batch_loss(
    items: list[tuple[RawPrediction, TargetTensor]],
    anchors: list[Anchor],
    cfg: LossConfig,
) -> LossBreakdown:
    """Mean loss over a batch: parts summed per item, divided by the count."""
    m = len(items)
    if m == 0:
        raise ValueError("empty batch")
    parts = np.zeros(4)
    for raw, target in items:
        b = total_loss(raw, target, anchors, cfg, batch_size=m)
        parts += (b.class_loss, b.anchor_loss, b.coord_loss, b.obj_loss)
    return LossBreakdown(*parts, float(parts.sum()))
