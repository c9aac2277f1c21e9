"""File formats for raw head tensors and detection dumps.

Raw tensor file: a fixed header followed by the flat payload.

    magic   4 bytes  b"GBT1"
    u32 LE  cells_x, cells_y, channels, num_anchors
    f64 LE  cell_w, cell_h
    payload cells_x * cells_y * channels float32 LE, C order [x, y, channel]

Detection dump: whitespace-separated text, one detection per line:

    <image_id> <class_id> <score> <x_min> <y_min> <x_max> <y_max>

Image ids must not contain whitespace.  Blank lines and lines starting
with '#' are ignored.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .decode import Detection, RawPrediction
from .geometry import CornerBox, GridSpec, from_corners, to_corners

MAGIC = b"GBT1"
_HEADER = struct.Struct("<4sIIIIdd")


class FormatError(ValueError):
    """A tensor or dump file that does not match the documented format."""


def write_raw_tensor(raw: RawPrediction, path: str | Path) -> None:
    header = _HEADER.pack(
        MAGIC,
        raw.grid.cells_x, raw.grid.cells_y, raw.channels, raw.num_anchors,
        raw.grid.cell_w, raw.grid.cell_h,
    )
    payload = np.ascontiguousarray(raw.values, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_raw_tensor(path: str | Path, num_classes: int | None = None) -> RawPrediction:
    """Read a raw tensor file; ``num_classes`` cross-checks the channel count."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, cells_x, cells_y, channels, num_anchors, cell_w, cell_h = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if channels < 5 + num_anchors + 1:
        raise FormatError(f"{path}: {channels} channels cannot hold {num_anchors} anchors")
    inferred_classes = channels - 5 - num_anchors
    if num_classes is not None and num_classes != inferred_classes:
        raise FormatError(
            f"{path}: file holds {inferred_classes} class channels, expected {num_classes}"
        )
    expected = cells_x * cells_y * channels
    payload = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if payload.size != expected:
        raise FormatError(f"{path}: payload holds {payload.size} floats, expected {expected}")
    values = payload.astype(np.float64).reshape(cells_x, cells_y, channels)
    grid = GridSpec(cell_w, cell_h, cells_x, cells_y)
    return RawPrediction(grid, num_anchors, inferred_classes, values)


def write_detections(dets_by_image: dict[str, list[Detection]], path: str | Path) -> None:
    lines = []
    for image_id in dets_by_image:
        if any(ch.isspace() for ch in image_id):
            raise FormatError(f"image id {image_id!r} contains whitespace")
        for d in dets_by_image[image_id]:
            c = to_corners(d.box)
            lines.append(
                f"{image_id} {d.class_id} {d.score:.8g} "
                f"{c.x_min:.6f} {c.y_min:.6f} {c.x_max:.6f} {c.y_max:.6f}"
            )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_detections(path: str | Path) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 7:
            raise FormatError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
        image_id, class_id, score, x_min, y_min, x_max, y_max = parts
        box = from_corners(CornerBox(float(x_min), float(y_min), float(x_max), float(y_max)))
        out.setdefault(image_id, []).append(
            Detection(box, int(class_id), float(score))
        )
    return out
