import numpy as np
import pytest
from PIL import Image

from gridbox.anchors import Anchor
from gridbox.geometry import Box
from gridbox.manifest import Annotation, ImageRecord, write_manifest

NINE_ANCHORS = [
    Anchor(10, 14), Anchor(25, 30), Anchor(40, 28),
    Anchor(60, 80), Anchor(100, 90), Anchor(120, 85),
    Anchor(150, 200), Anchor(250, 220), Anchor(380, 320),
]


@pytest.fixture
def nine_anchors():
    return list(NINE_ANCHORS)


class ToyDataset:
    """A small deterministic detection dataset rendered to disk."""

    def __init__(self, root, records, manifest_path, background_dir, image_root):
        self.root = root
        self.records = records
        self.manifest_path = manifest_path
        self.background_dir = background_dir
        self.image_root = image_root


def _render_record(rng, width, height, num_objects, num_classes):
    pixels = rng.integers(40, 120, size=(height, width, 3), dtype=np.uint8)
    image = Image.fromarray(pixels, "RGB")
    annotations = []
    for _ in range(num_objects):
        w = int(rng.integers(30, 90))
        h = int(rng.integers(30, 90))
        x0 = int(rng.integers(0, width - w))
        y0 = int(rng.integers(0, height - h))
        class_id = int(rng.integers(0, num_classes))
        block = np.full((h, w, 3), 0, dtype=np.uint8)
        block[:, :, class_id % 3] = 200 + class_id * 10
        arr = np.array(image)
        arr[y0:y0 + h, x0:x0 + w] = block
        image = Image.fromarray(arr, "RGB")
        annotations.append(Annotation(Box(x0 + w / 2, y0 + h / 2, w, h), class_id))
    return image, annotations


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    images = root / "images"
    backgrounds = root / "backgrounds"
    images.mkdir()
    backgrounds.mkdir()
    rng = np.random.default_rng(1234)

    records = []
    for i in range(10):
        image, annotations = _render_record(rng, 320, 240, int(rng.integers(1, 4)), 3)
        name = f"img_{i:03d}.png"
        image.save(images / name)
        records.append(ImageRecord(name, 320, 240, annotations))
    manifest_path = root / "manifest.jsonl"
    write_manifest(records, manifest_path)

    for i in range(4):
        pixels = rng.integers(100, 200, size=(256, 256, 3), dtype=np.uint8)
        Image.fromarray(pixels, "RGB").save(backgrounds / f"bg_{i}.png")

    return ToyDataset(root, records, manifest_path, backgrounds, images)
