"""Rendering boxes onto images for inspection.

Per-class colors come from a fixed golden-ratio hue walk so the same
class always draws in the same color.  The two-pane mode puts the raw
(pre-suppression) detections next to the suppressed ones.
"""

from __future__ import annotations

import colorsys

from PIL import Image, ImageDraw

from .decode import Detection
from .geometry import to_corners
from .manifest import Annotation


def class_color(class_id: int) -> tuple[int, int, int]:
    hue = (class_id * 0.6180339887498949) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 0.95)
    return int(r * 255), int(g * 255), int(b * 255)


def _caption(det_or_ann, class_names) -> str:
    cid = det_or_ann.class_id
    name = (
        class_names[cid]
        if class_names and 0 <= cid < len(class_names)
        else str(cid)
    )
    if isinstance(det_or_ann, Detection):
        return f"{name} {det_or_ann.score:.2f}"
    return name


def render(
    image: Image.Image,
    items: list[Detection] | list[Annotation],
    class_names: list[str] | None = None,
    show_labels: bool = True,
    line_width: int = 1,
) -> Image.Image:
    """Draw detection or annotation boxes onto a copy of the image.

    With no items the copy is pixel-identical to the input; with labels
    off only the box outlines are touched.
    """
    out = image.convert("RGB").copy()
    draw = ImageDraw.Draw(out)
    for item in items:
        c = to_corners(item.box)
        color = class_color(item.class_id)
        draw.rectangle(
            [round(c.x_min), round(c.y_min), round(c.x_max), round(c.y_max)],
            outline=color, width=line_width,
        )
        if show_labels:
            draw.text((round(c.x_min) + 2, round(c.y_min) + 2),
                      _caption(item, class_names), fill=color)
    return out


def render_suppression_pair(
    image: Image.Image,
    before: list[Detection],
    after: list[Detection],
    class_names: list[str] | None = None,
    show_labels: bool = True,
    line_width: int = 1,
) -> Image.Image:
    """Side-by-side panes: every detection on the left, survivors right."""
    left = render(image, before, class_names, show_labels, line_width)
    right = render(image, after, class_names, show_labels, line_width)
    out = Image.new("RGB", (image.width * 2, image.height))
    out.paste(left, (0, 0))
    out.paste(right, (image.width, 0))
    return out
