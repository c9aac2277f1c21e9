"""Dataset manifest ingestion: JSON-lines records plus a VOC-XML reader.

Manifest schema (one JSON object per line):

    {"image": "<path or id>",
     "width": <int>, "height": <int>,
     "boxes": [[x_min, y_min, x_max, y_max, class_id], ...],
     "difficult": [0, 1, ...]}          # optional, parallel to "boxes"

Box coordinates are pixels in the image frame; ``class_id`` is an integer
index.  ``difficult`` marks ground truth that evaluation should neither
reward nor penalize; it defaults to all zeros.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from .geometry import Box, CornerBox, clip_to_image, from_corners


class ManifestError(ValueError):
    """A manifest line or annotation file that cannot be parsed."""


@dataclass(frozen=True)
class Annotation:
    """One ground-truth object: a center-form box plus its class index."""

    box: Box
    class_id: int
    difficult: bool = False


@dataclass
class ImageRecord:
    """One manifest line: an image and its object annotations."""

    image: str
    width: int
    height: int
    annotations: list[Annotation] = field(default_factory=list)


def record_to_json(record: ImageRecord) -> str:
    boxes = []
    difficult = []
    for ann in record.annotations:
        c = ann.box
        boxes.append([
            c.x - c.w / 2, c.y - c.h / 2, c.x + c.w / 2, c.y + c.h / 2,
            ann.class_id,
        ])
        difficult.append(int(ann.difficult))
    obj = {
        "image": record.image,
        "width": record.width,
        "height": record.height,
        "boxes": boxes,
    }
    if any(difficult):
        obj["difficult"] = difficult
    return json.dumps(obj)


def record_from_json(line: str) -> ImageRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest line is not valid JSON: {line[:80]!r}") from e
    for key in ("image", "width", "height", "boxes"):
        if key not in obj:
            raise ManifestError(f"manifest record missing key {key!r}: {line[:80]!r}")
    difficult = obj.get("difficult") or [0] * len(obj["boxes"])
    if len(difficult) != len(obj["boxes"]):
        raise ManifestError(f"'difficult' length mismatch in record for {obj['image']!r}")
    annotations = []
    for entry, diff in zip(obj["boxes"], difficult):
        if len(entry) != 5:
            raise ManifestError(
                f"box entries must be [x_min, y_min, x_max, y_max, class_id], got {entry!r}"
            )
        x_min, y_min, x_max, y_max, class_id = entry
        corners = CornerBox(float(x_min), float(y_min), float(x_max), float(y_max))
        annotations.append(
            Annotation(from_corners(corners), int(class_id), bool(diff))
        )
    return ImageRecord(str(obj["image"]), int(obj["width"]), int(obj["height"]), annotations)


def read_manifest(path: str | Path) -> list[ImageRecord]:
    """Read a JSON-lines manifest; blank lines and '#' comments are skipped."""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            records.append(record_from_json(line))
    return records


def write_manifest(records: list[ImageRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(record_to_json(record) + "\n")


def read_voc_xml(path: str | Path, class_names: list[str]) -> ImageRecord:
    """Parse a single VOC annotation XML into a manifest record.

    ``class_names`` maps object names to class ids by list position;
    an object whose name is absent raises :class:`ManifestError`.
    """
    try:
        root = ET.parse(str(path)).getroot()
    except ET.ParseError as e:
        raise ManifestError(f"not valid XML: {path}") from e
    size = root.find("size")
    if size is None:
        raise ManifestError(f"missing <size> element: {path}")
    width = int(size.findtext("width"))
    height = int(size.findtext("height"))
    filename = root.findtext("filename") or Path(path).stem
    annotations = []
    for obj in root.iter("object"):
        name = obj.findtext("name")
        if name not in class_names:
            raise ManifestError(f"unknown class {name!r} in {path}")
        bnd = obj.find("bndbox")
        corners = CornerBox(
            float(bnd.findtext("xmin")), float(bnd.findtext("ymin")),
            float(bnd.findtext("xmax")), float(bnd.findtext("ymax")),
        )
        difficult = (obj.findtext("difficult") or "0").strip() == "1"
        annotations.append(Annotation(from_corners(corners), class_names.index(name), difficult))
    return ImageRecord(filename, width, height, annotations)


def voc_dir_to_manifest(xml_dir: str | Path, class_names: list[str]) -> list[ImageRecord]:
    """Read every ``*.xml`` file in a directory, sorted by name."""
    return [read_voc_xml(p, class_names) for p in sorted(Path(xml_dir).glob("*.xml"))]


def clip_annotations(
    annotations: list[Annotation], width: float, height: float, min_area: float = 1.0
) -> tuple[list[Annotation], list[Annotation]]:
    """Clip annotation boxes to the image; split off those that degenerate.

    Returns (kept, dropped): a box whose clipped area falls below
    ``min_area`` square pixels is dropped rather than silently kept.
    """
    kept, dropped = [], []
    for ann in annotations:
        c = clip_to_image(
            CornerBox(
                ann.box.x - ann.box.w / 2, ann.box.y - ann.box.h / 2,
                ann.box.x + ann.box.w / 2, ann.box.y + ann.box.h / 2,
            ),
            width, height,
        )
        if c is None or c.area < min_area:
            dropped.append(ann)
        else:
            kept.append(Annotation(from_corners(c), ann.class_id, ann.difficult))
    return kept, dropped


def letterbox(
    image: Image.Image,
    annotations: list[Annotation],
    out_w: int,
    out_h: int,
    fill: tuple[int, int, int] = (114, 114, 114),
) -> tuple[Image.Image, list[Annotation]]:
    """Uniformly rescale an image to fit (out_w, out_h), padding the rest.

    The single resize entry point of the library: aspect ratio is
    preserved, the scaled image is centered on a ``fill``-colored canvas
    and every annotation box is mapped by the same scale and offset.
    """
    scale = min(out_w / image.width, out_h / image.height)
    new_w = max(1, round(image.width * scale))
    new_h = max(1, round(image.height * scale))
    pad_x = (out_w - new_w) // 2
    pad_y = (out_h - new_h) // 2
    canvas = Image.new("RGB", (out_w, out_h), fill)
    canvas.paste(image.convert("RGB").resize((new_w, new_h), Image.BILINEAR), (pad_x, pad_y))
    mapped = [
        Annotation(
            Box(ann.box.x * scale + pad_x, ann.box.y * scale + pad_y,
                ann.box.w * scale, ann.box.h * scale),
            ann.class_id, ann.difficult,
        )
        for ann in annotations
    ]
    return canvas, mapped
