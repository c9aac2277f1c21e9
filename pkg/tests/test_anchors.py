import numpy as np
import pytest

from gridbox.anchors import (
    Anchor,
    ClusterConfig,
    assign_best_anchor,
    kmeans_iou,
    read_anchors,
    split_by_scale,
    write_anchors,
)
from gridbox.geometry import iou_wh


def brute_force_best_mean_iou(sizes, k):
    """Exhaustive oracle: best achievable mean best-IoU over all
    partitions of the distinct sizes into exactly k clusters.  Each
    partition is scored by its coordinate-wise median centroids, with
    duplicates keeping their multiplicity (identical boxes travel
    together, as any nearest-centroid assignment would place them)."""
    arr = np.asarray(sorted(sizes), dtype=float)
    distinct, counts = np.unique(arr, axis=0, return_counts=True)

    def partitions(items, blocks):
        if not items:
            if blocks == 0:
                yield []
            return
        first, rest = items[0], items[1:]
        for p in partitions(rest, blocks):
            for i in range(len(p)):
                yield p[:i] + [p[i] + [first]] + p[i + 1:]
        for p in partitions(rest, blocks - 1):
            yield p + [[first]]

    best = 0.0
    for partition in partitions(list(range(len(distinct))), k):
        centroids = np.array([
            np.median(np.repeat(distinct[block], counts[block], axis=0), axis=0)
            for block in partition
        ])
        score = np.mean([
            max(iou_wh(w, h, cw, ch) for cw, ch in centroids) for w, h in arr
        ])
        best = max(best, score)
    return best


def test_three_boxes_two_clusters():
    result = kmeans_iou([(10, 10), (10, 10), (50, 50)], ClusterConfig(k=2, seed=0))
    assert [(a.w, a.h) for a in result.anchors] == [(10, 10), (50, 50)]
    assert result.mean_iou == pytest.approx(1.0)


def test_identical_boxes_single_cluster():
    result = kmeans_iou([(30, 40)] * 7, ClusterConfig(k=1))
    assert [(a.w, a.h) for a in result.anchors] == [(30, 40)]


def test_k_equals_distinct_count():
    sizes = [(10, 20), (10, 20), (30, 15), (80, 90)]
    result = kmeans_iou(sizes, ClusterConfig(k=3, seed=5))
    assert sorted((a.w, a.h) for a in result.anchors) == [(10, 20), (30, 15), (80, 90)]
    assert result.mean_iou == pytest.approx(1.0)


def test_too_few_distinct_boxes():
    with pytest.raises(ValueError):
        kmeans_iou([(10, 10), (10, 10)], ClusterConfig(k=2))
    with pytest.raises(ValueError):
        kmeans_iou([], ClusterConfig(k=1))


def test_input_order_invariance():
    rng = np.random.default_rng(2)
    sizes = [tuple(map(float, s)) for s in rng.uniform(5, 200, size=(60, 2))]
    cfg = ClusterConfig(k=4, seed=11)
    forward = kmeans_iou(sizes, cfg)
    backward = kmeans_iou(list(reversed(sizes)), cfg)
    assert forward.anchors == backward.anchors


def test_mean_iou_history_is_monotone():
    rng = np.random.default_rng(3)
    sizes = [tuple(map(float, s)) for s in rng.uniform(4, 400, size=(300, 2))]
    result = kmeans_iou(sizes, ClusterConfig(k=9, seed=1))
    assert all(b >= a for a, b in zip(result.iou_history, result.iou_history[1:]))
    assert result.mean_iou == pytest.approx(result.iou_history[-1])


def test_matches_brute_force_on_small_sets():
    rng = np.random.default_rng(42)
    for trial in range(25):
        n_distinct = int(rng.integers(2, 7))
        k = int(rng.integers(1, min(3, n_distinct) + 1))
        distinct = rng.uniform(5, 120, size=(n_distinct, 2))
        repeats = rng.integers(1, 4, size=n_distinct)
        sizes = [tuple(map(float, d)) for d, r in zip(distinct, repeats) for _ in range(int(r))]
        result = kmeans_iou(sizes, ClusterConfig(k=k, seed=trial))
        oracle = brute_force_best_mean_iou(sizes, k)
        assert abs(result.mean_iou - oracle) <= 1e-4, (trial, result.mean_iou, oracle)


def test_assign_best_anchor():
    anchors = [Anchor(10, 10), Anchor(90, 110)]
    assert assign_best_anchor(100, 100, anchors) == 1
    assert assign_best_anchor(10, 10, anchors) == 0
    assert assign_best_anchor(42, 17, [Anchor(50, 20)]) == 0
    # exact size match is maximal
    four = [Anchor(10, 10), Anchor(20, 20), Anchor(30, 30), Anchor(40, 40)]
    assert assign_best_anchor(30, 30, four) == 2
    # tie breaks to the lower index
    assert assign_best_anchor(10, 10, [Anchor(5, 5), Anchor(5, 5)]) == 0


def test_anchor_validation():
    with pytest.raises(ValueError):
        Anchor(0, 5)
    with pytest.raises(ValueError):
        ClusterConfig(k=0)
    with pytest.raises(ValueError):
        ClusterConfig(tol=0)
    with pytest.raises(ValueError):
        ClusterConfig(centroid="mode")


def test_anchor_file_round_trip(tmp_path, nine_anchors):
    path = tmp_path / "anchors.txt"
    write_anchors(nine_anchors, path)
    text = path.read_text()
    assert text.count(",") == 17  # nine w,h pairs joined by ", "
    back = read_anchors(path)
    assert back == sorted(nine_anchors, key=lambda a: a.area)


def test_anchor_file_odd_value_count(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("10,13, 16\n")
    with pytest.raises(ValueError):
        read_anchors(path)


def test_split_by_scale(nine_anchors):
    groups = split_by_scale(nine_anchors)
    assert [len(g) for g in groups] == [3, 3, 3]
    assert groups[0][0] == nine_anchors[0]
    assert groups[2][2] == nine_anchors[8]
    with pytest.raises(ValueError):
        split_by_scale(nine_anchors[:7])
