"""Anchor generation by IoU-distance K-means, anchor matching, anchor files.

Clustering treats every training box as a concentric (width, height)
pair and minimizes 1 - IoU to its cluster centroid.  Centroids are
coordinate-wise medians by default (mean is available via config);
initialization is k-means++ under the same distance, run from several
seeded restarts with the best mean-IoU solution kept.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .geometry import iou_wh


@dataclass(frozen=True)
class Anchor:
    """A prototypical box size in pixels."""

    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"anchor size must be positive, got ({self.w}, {self.h})")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass
class ClusterConfig:
    k: int = 9
    seed: int = 0
    max_iters: int = 300
    tol: float = 1e-4          # convergence threshold on mean-IoU improvement
    centroid: str = "median"   # or "mean"
    restarts: int = 10
    refine_groups: int = 64    # run the move/swap refinement when the number
                               # of distinct sizes is at most this (cost grows
                               # quadratically with it)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.centroid not in ("median", "mean"):
            raise ValueError(f"centroid must be 'median' or 'mean', got {self.centroid!r}")


@dataclass
class ClusterResult:
    anchors: list[Anchor]      # ascending by area
    mean_iou: float            # mean best-IoU of the dataset against the anchors
    iterations: int
    converged: bool
    iou_history: list[float]   # mean best-IoU after each accepted iteration


def _pairwise_iou_wh(boxes: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """IoU of every concentric (w, h) box against every centroid; (n, k)."""
    inter = np.minimum(boxes[:, None, 0], centroids[None, :, 0]) * np.minimum(
        boxes[:, None, 1], centroids[None, :, 1]
    )
    areas = boxes[:, 0] * boxes[:, 1]
    c_areas = centroids[:, 0] * centroids[:, 1]
    return inter / (areas[:, None] + c_areas[None, :] - inter)


def _update_centroids(boxes, assign, centroids, how):
    new = centroids.copy()
    for i in range(len(centroids)):
        members = boxes[assign == i]
        if len(members) == 0:
            # re-seed an empty cluster with the worst-covered box
            best = _pairwise_iou_wh(boxes, new).max(axis=1)
            new[i] = boxes[int(np.argmin(best))]
        elif how == "median":
            new[i] = np.median(members, axis=0)
        else:
            new[i] = members.mean(axis=0)
    return new


def _kmeans_once(boxes: np.ndarray, initial: np.ndarray, cfg: ClusterConfig):
    """One K-means run from fixed initial centroids.

    The seed centroids only drive the first assignment; after that every
    centroid is a per-cluster median.  Mean best-IoU is re-measured after
    each update and an update that would lower it is reverted, ending the
    run, so the per-iteration IoU history is non-decreasing.
    """
    centroids = initial.copy()
    history: list[float] = []
    assign = None
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        new_assign = _pairwise_iou_wh(boxes, centroids).argmax(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            converged = True
            break
        assign = new_assign
        new_centroids = _update_centroids(boxes, assign, centroids, cfg.centroid)
        new_iou = float(_pairwise_iou_wh(boxes, new_centroids).max(axis=1).mean())
        if history and new_iou < history[-1]:
            converged = True
            break
        centroids = new_centroids
        history.append(new_iou)
        if len(history) >= 2 and history[-1] - history[-2] < cfg.tol:
            converged = True
            break
    if not history:
        history = [float(_pairwise_iou_wh(boxes, centroids).max(axis=1).mean())]
    return centroids, history[-1], iterations, converged, history


def _refine_partition(boxes: np.ndarray, centroids: np.ndarray, cfg: ClusterConfig,
                      max_sweeps: int = 50):
    """Local search on the partition itself: move one distinct size group
    (or swap two) between clusters whenever the re-computed centroids
    score a higher mean best-IoU.

    Lloyd iterations can only reach partitions that are nearest-centroid
    consistent under their own centroids; the best partition often is
    not.  This stage escapes those, at quadratic cost in the number of
    distinct sizes, so it only runs for small inputs (see
    ``ClusterConfig.refine_groups``).
    """
    distinct, inverse = np.unique(boxes, axis=0, return_inverse=True)
    k = len(centroids)
    groups = len(distinct)
    assign = _pairwise_iou_wh(distinct, centroids).argmax(axis=1)

    def evaluate(trial):
        if not np.all(np.bincount(trial, minlength=k) > 0):
            return None, -1.0
        per_box = trial[inverse]
        if cfg.centroid == "median":
            cents = np.array([np.median(boxes[per_box == i], axis=0) for i in range(k)])
        else:
            cents = np.array([boxes[per_box == i].mean(axis=0) for i in range(k)])
        return cents, float(_pairwise_iou_wh(boxes, cents).max(axis=1).mean())

    start, best = evaluate(assign)
    if start is None:
        best = float(_pairwise_iou_wh(boxes, centroids).max(axis=1).mean())
    else:
        centroids = start
    for _ in range(max_sweeps):
        improved = False
        for g in range(groups):
            for dst in range(k):
                if dst == assign[g]:
                    continue
                trial = assign.copy()
                trial[g] = dst
                cents, s = evaluate(trial)
                if s > best + 1e-12:
                    best, assign, centroids, improved = s, trial, cents, True
        for g1 in range(groups):
            for g2 in range(g1 + 1, groups):
                if assign[g1] == assign[g2]:
                    continue
                trial = assign.copy()
                trial[g1], trial[g2] = trial[g2], trial[g1]
                cents, s = evaluate(trial)
                if s > best + 1e-12:
                    best, assign, centroids, improved = s, trial, cents, True
        if not improved:
            break
    return centroids, best


def _kmeans_pp_init(boxes: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding under the 1 - IoU distance."""
    centroids = [boxes[rng.integers(len(boxes))]]
    while len(centroids) < k:
        dist = 1.0 - _pairwise_iou_wh(boxes, np.asarray(centroids)).max(axis=1)
        total = dist.sum()
        if total <= 0:
            # all boxes coincide with a centroid; any remaining box works
            centroids.append(boxes[rng.integers(len(boxes))])
            continue
        centroids.append(boxes[rng.choice(len(boxes), p=dist / total)])
    return np.asarray(centroids)


def kmeans_iou(boxes: list[tuple[float, float]], cfg: ClusterConfig) -> ClusterResult:
    """Cluster (w, h) pairs into ``cfg.k`` anchors, sorted ascending by area.

    Deterministic for a given seed and independent of input order (boxes
    are canonicalized by sorting before any random draw).  Requires at
    least ``k`` distinct sizes.  For small inputs every distinct k-subset
    is tried as an initialization and a move/swap refinement follows each
    run; larger inputs use seeded k-means++ restarts.  The best mean-IoU
    solution wins.
    """
    if len(boxes) == 0:
        raise ValueError("cannot cluster an empty box list")
    arr = np.asarray(sorted(boxes), dtype=np.float64)
    if np.any(arr <= 0):
        raise ValueError("box sizes must be positive")
    distinct = np.unique(arr, axis=0)
    if len(distinct) < cfg.k:
        raise ValueError(
            f"need at least k={cfg.k} distinct box sizes, got {len(distinct)}"
        )

    inits = []
    n_subsets = _n_choose_k(len(distinct), cfg.k)
    if n_subsets <= 256:
        inits = [distinct[list(idx)] for idx in combinations(range(len(distinct)), cfg.k)]
    else:
        rng = np.random.default_rng(cfg.seed)
        inits = [_kmeans_pp_init(arr, cfg.k, rng) for _ in range(cfg.restarts)]

    best = None
    for initial in inits:
        centroids, mean_iou, iterations, converged, history = _kmeans_once(arr, initial, cfg)
        if len(distinct) <= cfg.refine_groups:
            centroids, refined = _refine_partition(arr, centroids, cfg)
            if refined > mean_iou:
                mean_iou = refined
                history = history + [refined]
        run = (centroids, mean_iou, iterations, converged, history)
        if best is None or run[1] > best[1]:
            best = run
    centroids, mean_iou, iterations, converged, history = best
    order = np.argsort(centroids[:, 0] * centroids[:, 1], kind="stable")
    anchors = [Anchor(float(w), float(h)) for w, h in centroids[order]]
    return ClusterResult(anchors, mean_iou, iterations, converged, history)


def _n_choose_k(n: int, k: int) -> int:
    out = 1
    for i in range(k):
        out = out * (n - i) // (i + 1)
    return out


def assign_best_anchor(box_w: float, box_h: float, anchors: list[Anchor]) -> int:
    """Index of the anchor with the highest concentric IoU; ties go low."""
    if not anchors:
        raise ValueError("anchor list is empty")
    best_idx, best_iou = 0, -1.0
    for i, a in enumerate(anchors):
        v = iou_wh(box_w, box_h, a.w, a.h)
        if v > best_iou:
            best_idx, best_iou = i, v
    return best_idx


def split_by_scale(anchors: list[Anchor], num_scales: int = 3) -> list[list[Anchor]]:
    """Partition an area-ascending anchor list evenly across scales.

    The smallest anchors go to the finest grid.  Length must be an exact
    multiple of ``num_scales``.
    """
    if len(anchors) % num_scales:
        raise ValueError(f"{len(anchors)} anchors do not split into {num_scales} scales")
    per = len(anchors) // num_scales
    return [anchors[i * per:(i + 1) * per] for i in range(num_scales)]


def write_anchors(anchors: list[Anchor], path: str | Path) -> None:
    """Write anchors as one line of comma-separated "w,h" pairs, area-ascending."""
    ordered = sorted(anchors, key=lambda a: a.area)
    text = ", ".join(f"{a.w:g},{a.h:g}" for a in ordered)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_anchors(path: str | Path) -> list[Anchor]:
    """Read an anchors file: comma-separated w,h values, optionally multi-line."""
    values = [
        float(tok)
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        for tok in line.replace(",", " ").split()
    ]
    if not values or len(values) % 2:
        raise ValueError(f"anchor file {path} must hold an even number of values")
    return [Anchor(values[i], values[i + 1]) for i in range(0, len(values), 2)]
