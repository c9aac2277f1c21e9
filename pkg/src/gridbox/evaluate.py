"""Detection metrics: greedy matching, per-class AP, VOC mAP and
COCO-style averaged AP with size buckets.

Matching is per image and per class, greedy by descending score: a
detection claims the highest-IoU not-yet-matched ground truth of its
class when the IoU reaches the threshold, otherwise it is a false
positive.  Ground truth flagged difficult is never counted and never
penalizes a detection that lands on it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .decode import Detection
from .geometry import iou, to_corners
from .manifest import Annotation

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))  # 0.50 .. 0.95

# area buckets by ground-truth box area, in square pixels
SMALL_MAX = 32.0 ** 2
LARGE_MIN = 96.0 ** 2

PROTOCOLS = ("voc11", "vocall", "coco")


@dataclass
class EvalConfig:
    iou_threshold: float = 0.5
    protocol: str = "voc11"
    coco_thresholds: tuple[float, ...] = COCO_THRESHOLDS

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        for t in (self.iou_threshold, *self.coco_thresholds):
            if not 0 < t <= 1:
                raise ValueError(f"IoU thresholds must lie in (0, 1], got {t}")


@dataclass
class MatchResult:
    """Per-detection outcome flags ('tp' / 'fp' / 'ignore', input order)
    and the number of countable ground-truth boxes per class."""

    flags: list[str]
    gt_counts: dict[int, int]


def _area_bucket_ok(area: float, bucket: str | None) -> bool:
    if bucket is None:
        return True
    if bucket == "small":
        return area < SMALL_MAX
    if bucket == "medium":
        return SMALL_MAX <= area <= LARGE_MIN
    if bucket == "large":
        return area > LARGE_MIN
    raise ValueError(f"unknown area bucket {bucket!r}")


def match_detections(
    dets: list[Detection],
    gts: list[Annotation],
    iou_thresh: float,
    area_bucket: str | None = None,
) -> MatchResult:
    """Greedy score-descending matching for one image.

    A ground truth is ignored (matchable, uncounted, never a penalty)
    when flagged difficult or, under an ``area_bucket``, when its box
    area falls outside the bucket.  An unmatched detection whose own
    area falls outside the bucket is likewise ignored instead of FP.
    """
    gt_ignored = [
        g.difficult or not _area_bucket_ok(g.box.area, area_bucket) for g in gts
    ]
    gt_counts: dict[int, int] = {}
    for g, ignored in zip(gts, gt_ignored):
        if not ignored:
            gt_counts[g.class_id] = gt_counts.get(g.class_id, 0) + 1

    gt_corners = [to_corners(g.box) for g in gts]
    used = [False] * len(gts)
    flags = ["fp"] * len(dets)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    for i in order:
        det = dets[i]
        det_corners = to_corners(det.box)
        best_j, best_iou = -1, 0.0
        ign_j, ign_iou = -1, 0.0
        for j, g in enumerate(gts):
            if g.class_id != det.class_id:
                continue
            v = iou(det_corners, gt_corners[j])
            if gt_ignored[j]:
                if v > ign_iou:
                    ign_j, ign_iou = j, v
            elif not used[j] and v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0 and best_iou >= iou_thresh:
            flags[i] = "tp"
            used[best_j] = True
        elif ign_j >= 0 and ign_iou >= iou_thresh:
            flags[i] = "ignore"
        elif not _area_bucket_ok(det.box.area, area_bucket):
            flags[i] = "ignore"
        else:
            flags[i] = "fp"
    return MatchResult(flags, gt_counts)


def average_precision(
    scored_flags: list[tuple[float, bool]], gt_count: int, protocol: str = "voc11"
) -> float:
    """AP of one class from (score, is_tp) pairs over the whole dataset.

    ``voc11`` samples max precision at the eleven recalls 0.0, 0.1, ...
    1.0; ``vocall`` (also used per-threshold by the COCO averaging)
    integrates the monotone precision envelope over recall.
    """
    if gt_count <= 0:
        raise ValueError("AP is undefined for a class with zero ground truth")
    if not scored_flags:
        return 0.0
    ordered = sorted(range(len(scored_flags)), key=lambda i: (-scored_flags[i][0], i))
    tp = np.array([1.0 if scored_flags[i][1] else 0.0 for i in ordered])
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = cum_tp / gt_count
    precision = cum_tp / (cum_tp + cum_fp)
    if protocol == "voc11":
        ap = 0.0
        for r in np.linspace(0.0, 1.0, 11):
            mask = recall >= r - 1e-12
            ap += float(precision[mask].max()) if mask.any() else 0.0
        return ap / 11.0
    # all-point: area under the monotone envelope
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass
class EvalReport:
    protocol: str
    iou_threshold: float
    per_class_ap: dict[int, float]
    mean_ap: float
    zero_gt_classes: list[int] = field(default_factory=list)
    skipped_images: list[str] = field(default_factory=list)
    coco: dict[str, float] | None = None

    def to_json_dict(self) -> dict:
        out = {
            "protocol": self.protocol,
            "iou_threshold": self.iou_threshold,
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "mAP": self.mean_ap,
            "zero_gt_classes": self.zero_gt_classes,
            "skipped_images": self.skipped_images,
        }
        if self.coco is not None:
            out["coco"] = self.coco
        return out

    def to_text(self, class_names: list[str] | None = None) -> str:
        def name(cid: int) -> str:
            if class_names and 0 <= cid < len(class_names):
                return class_names[cid]
            return f"class {cid}"

        lines = [f"protocol: {self.protocol}   matching IoU: {self.iou_threshold:g}"]
        for cid in sorted(self.per_class_ap):
            lines.append(f"  {name(cid):<20s} AP = {self.per_class_ap[cid]:.4f}")
        lines.append(f"  {'mAP':<20s}      {self.mean_ap:.4f}")
        if self.coco is not None:
            c = self.coco
            lines.append(
                "  AP {AP:.4f}  AP50 {AP50:.4f}  AP75 {AP75:.4f}  "
                "APS {APS}  APM {APM}  APL {APL}".format(
                    AP=c["AP"], AP50=c["AP50"], AP75=c["AP75"],
                    APS=_fmt_opt(c["APS"]), APM=_fmt_opt(c["APM"]), APL=_fmt_opt(c["APL"]),
                )
            )
        if self.zero_gt_classes:
            lines.append(f"  note: no ground truth for classes {self.zero_gt_classes}; "
                         "excluded from mAP")
        if self.skipped_images:
            lines.append(f"  note: {len(self.skipped_images)} predicted image ids missing "
                         f"from ground truth: {self.skipped_images}")
        return "\n".join(lines)


def _fmt_opt(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def _class_ap_at(
    dets_by_image: dict[str, list[Detection]],
    gts_by_image: dict[str, list[Annotation]],
    iou_thresh: float,
    protocol: str,
    area_bucket: str | None = None,
) -> dict[int, float]:
    """AP per class at one matching threshold over the dataset."""
    scored: dict[int, list[tuple[float, bool]]] = {}
    gt_counts: dict[int, int] = {}
    for image_id in sorted(gts_by_image):
        gts = gts_by_image[image_id]
        dets = dets_by_image.get(image_id, [])
        result = match_detections(dets, gts, iou_thresh, area_bucket)
        for cid, count in result.gt_counts.items():
            gt_counts[cid] = gt_counts.get(cid, 0) + count
        for det, flag in zip(dets, result.flags):
            if flag == "ignore":
                continue
            scored.setdefault(det.class_id, []).append((det.score, flag == "tp"))
    return {
        cid: average_precision(scored.get(cid, []), count, protocol)
        for cid, count in gt_counts.items()
        if count > 0
    }


def evaluate_detections(
    dets_by_image: dict[str, list[Detection]],
    gts_by_image: dict[str, list[Annotation]],
    cfg: EvalConfig,
) -> EvalReport:
    """Score a full prediction set against ground truth.

    Predicted image ids without ground truth are listed and excluded.
    Classes that are predicted but have no ground truth anywhere have
    undefined AP; they are noted and left out of the mean.
    """
    skipped = sorted(set(dets_by_image) - set(gts_by_image))
    dets_by_image = {k: v for k, v in dets_by_image.items() if k in gts_by_image}

    gt_classes = {g.class_id for gts in gts_by_image.values() for g in gts if not g.difficult}
    det_classes = {d.class_id for dets in dets_by_image.values() for d in dets}
    zero_gt = sorted(det_classes - gt_classes)

    if cfg.protocol in ("voc11", "vocall"):
        per_class = _class_ap_at(
            dets_by_image, gts_by_image, cfg.iou_threshold, cfg.protocol
        )
        mean_ap = float(np.mean(list(per_class.values()))) if per_class else 0.0
        return EvalReport(cfg.protocol, cfg.iou_threshold, per_class, mean_ap,
                          zero_gt, skipped)

    # COCO-style: average the all-point AP over the threshold grid
    per_thresh: dict[float, dict[int, float]] = {}
    for t in cfg.coco_thresholds:
        per_thresh[t] = _class_ap_at(dets_by_image, gts_by_image, t, "vocall")
    all_vals = [ap for aps in per_thresh.values() for ap in aps.values()]
    coco = {
        "AP": float(np.mean(all_vals)) if all_vals else 0.0,
        "AP50": _mean_or_zero(per_thresh.get(0.5, {})),
        "AP75": _mean_or_zero(per_thresh.get(0.75, {})),
    }
    for key, bucket in (("APS", "small"), ("APM", "medium"), ("APL", "large")):
        vals = []
        for t in cfg.coco_thresholds:
            vals.extend(
                _class_ap_at(dets_by_image, gts_by_image, t, "vocall", bucket).values()
            )
        coco[key] = float(np.mean(vals)) if vals else None
    per_class_50 = per_thresh.get(0.5, {})
    return EvalReport("coco", cfg.iou_threshold, per_class_50, coco["AP"],
                      zero_gt, skipped, coco)


def _mean_or_zero(aps: dict[int, float]) -> float:
    return float(np.mean(list(aps.values()))) if aps else 0.0


def gts_from_records(records) -> dict[str, list[Annotation]]:
    """Index manifest records by image id for evaluation."""
    return {r.image: list(r.annotations) for r in records}


def write_report(report: EvalReport, path, class_names: list[str] | None = None) -> None:
    """Write the JSON form of a report; a sibling .txt gets the text form."""
    from pathlib import Path

    p = Path(path)
    p.write_text(json.dumps(report.to_json_dict(), indent=2) + "\n", encoding="utf-8")
    p.with_suffix(".txt").write_text(report.to_text(class_names) + "\n", encoding="utf-8")
