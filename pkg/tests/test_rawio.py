import numpy as np
import pytest

from gridbox.decode import Detection, RawPrediction
from gridbox.geometry import Box, GridSpec
from gridbox.rawio import (
    FormatError,
    read_detections,
    read_raw_tensor,
    write_detections,
    write_raw_tensor,
)


def test_raw_tensor_round_trip(tmp_path):
    grid = GridSpec(16, 16, 26, 26)
    rng = np.random.default_rng(0)
    values = rng.normal(size=(26, 26, 5 + 3 + 4))
    raw = RawPrediction(grid, 3, 4, values)
    path = tmp_path / "scale.gbt"
    write_raw_tensor(raw, path)
    back = read_raw_tensor(path)
    assert back.grid == grid
    assert back.num_anchors == 3 and back.num_classes == 4
    # payload is float32 on disk
    assert np.allclose(back.values, values, atol=1e-5)
    assert np.array_equal(back.values, values.astype("<f4").astype(np.float64))


def test_raw_tensor_class_check(tmp_path):
    raw = RawPrediction(GridSpec(32, 32, 4, 4), 1, 2, np.zeros((4, 4, 8)))
    path = tmp_path / "t.gbt"
    write_raw_tensor(raw, path)
    assert read_raw_tensor(path, num_classes=2).num_classes == 2
    with pytest.raises(FormatError):
        read_raw_tensor(path, num_classes=5)


def test_raw_tensor_corrupt(tmp_path):
    path = tmp_path / "bad.gbt"
    path.write_bytes(b"nope")
    with pytest.raises(FormatError):
        read_raw_tensor(path)
    good = tmp_path / "trunc.gbt"
    raw = RawPrediction(GridSpec(32, 32, 4, 4), 1, 2, np.zeros((4, 4, 8)))
    write_raw_tensor(raw, good)
    good.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(FormatError):
        read_raw_tensor(good)


def test_detection_dump_round_trip(tmp_path):
    dets = {
        "img1": [Detection(Box(50, 60, 20, 30), 0, 0.875),
                 Detection(Box(100, 100, 40, 40), 2, 0.5)],
        "img2": [],
        "img3": [Detection(Box(10.5, 11.25, 3.5, 4.25), 1, 0.125)],
    }
    path = tmp_path / "dets.txt"
    write_detections(dets, path)
    back = read_detections(path)
    assert set(back) == {"img1", "img3"}  # empty image writes no lines
    d = back["img1"][0]
    assert d.class_id == 0 and d.score == 0.875
    assert d.box.x == pytest.approx(50) and d.box.h == pytest.approx(30)
    assert back["img3"][0].box.w == pytest.approx(3.5)


def test_detection_dump_format_errors(tmp_path):
    with pytest.raises(FormatError):
        write_detections({"has space": []}, tmp_path / "x.txt")
    bad = tmp_path / "bad.txt"
    bad.write_text("img 0 0.5 1 2 3\n")
    with pytest.raises(FormatError):
        read_detections(bad)


def test_detection_dump_skips_comments(tmp_path):
    path = tmp_path / "dets.txt"
    path.write_text("# image class score corners\n\nimg 1 0.75 10 20 30 40\n")
    back = read_detections(path)
    assert back["img"][0].class_id == 1
