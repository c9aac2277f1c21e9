"""Offline copy-paste image synthesis.

Object patches are cut from source images with a 10-15 px safety border
per side (so no annotation ever sits on a paste seam), individually
augmented, then packed shelf-wise onto object-free background images
with zero pairwise overlap.  Candidate crop subsets are tried in
decreasing total-area order until one packs and covers enough of the
background.

Every output image is generated from a random stream derived from
(seed, image index), so results are reproducible byte for byte and
independent of generation order or worker count.
"""

from __future__ import annotations

import heapq
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageEnhance, ImageOps

from .geometry import Box, CornerBox
from .manifest import Annotation, ImageRecord, write_manifest

log = logging.getLogger(__name__)

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")

AUG_FLIP = "hflip"
AUG_BRIGHTNESS = "brightness"
AUG_CONTRAST = "contrast"
DEFAULT_AUGS = (AUG_FLIP, AUG_BRIGHTNESS, AUG_CONTRAST)


@dataclass
class SynthesisConfig:
    objects_per_round: int = 8          # p: objects sampled each round
    images_per_round: int = 4           # q: source images sampled each round
    border_range: tuple[int, int] = (10, 15)
    coverage_target: float = 0.4        # fraction of background area to fill
    seed: int = 0
    augmentations: tuple[str, ...] = DEFAULT_AUGS
    output_count: int = 100
    max_subsets: int = 512              # cap on crop-subset combinations tried
    jitter_max: int = 8                 # random gap between packed patches, px

    def __post_init__(self):
        if self.objects_per_round < 1 or self.images_per_round < 1:
            raise ValueError("objects_per_round and images_per_round must be >= 1")
        if not 0 < self.coverage_target <= 1:
            raise ValueError(f"coverage_target must be in (0, 1], got {self.coverage_target}")
        lo, hi = self.border_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad border range {self.border_range}")
        unknown = set(self.augmentations) - set(DEFAULT_AUGS)
        if unknown:
            raise ValueError(f"unknown augmentations: {sorted(unknown)}")
        if self.output_count < 0:
            raise ValueError("output_count must be >= 0")


@dataclass
class ObjectCrop:
    """An augmented object patch plus the tight box inside it.

    The tight box stays strictly interior on every side that was not
    clipped by the source image border.
    """

    patch: Image.Image
    class_id: int
    tight: CornerBox

    @property
    def margins(self) -> tuple[float, float, float, float]:
        """Distances (left, top, right, bottom) from the tight box to the patch edge."""
        return (
            self.tight.x_min,
            self.tight.y_min,
            self.patch.width - self.tight.x_max,
            self.patch.height - self.tight.y_max,
        )


@dataclass
class Placement:
    crop: ObjectCrop
    x: int
    y: int


@dataclass
class Layout:
    placements: list[Placement] = field(default_factory=list)
    coverage: float = 0.0
    skipped: bool = False


def _load_image(path: Path) -> Image.Image | None:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (OSError, ValueError) as e:
        log.warning("skipping unreadable image %s: %s", path, e)
        return None


def extract_crop(
    image: Image.Image,
    annotation: Annotation,
    rng: np.random.Generator,
    augmentations: tuple[str, ...] = DEFAULT_AUGS,
    border_range: tuple[int, int] = (10, 15),
) -> ObjectCrop:
    """Cut one object out of its source image with a random safety border.

    Each side gets an independent uniform border from ``border_range``,
    clipped at the source edges.  The configured augmentations are then
    applied independently, each with probability one half, in a fixed
    order so the random stream stays reproducible.
    """
    b = annotation.box
    x_min, y_min = b.x - b.w / 2, b.y - b.h / 2
    x_max, y_max = b.x + b.w / 2, b.y + b.h / 2
    lo, hi = border_range
    borders = rng.integers(lo, hi + 1, size=4)  # left, top, right, bottom
    px0 = max(0, int(np.floor(x_min)) - int(borders[0]))
    py0 = max(0, int(np.floor(y_min)) - int(borders[1]))
    px1 = min(image.width, int(np.ceil(x_max)) + int(borders[2]))
    py1 = min(image.height, int(np.ceil(y_max)) + int(borders[3]))
    patch = image.crop((px0, py0, px1, py1))
    tight = CornerBox(
        max(x_min - px0, 0.0), max(y_min - py0, 0.0),
        min(x_max - px0, float(patch.width)), min(y_max - py0, float(patch.height)),
    )

    for aug in (AUG_FLIP, AUG_BRIGHTNESS, AUG_CONTRAST):
        if aug not in augmentations:
            continue
        if rng.random() >= 0.5:
            continue
        if aug == AUG_FLIP:
            patch = ImageOps.mirror(patch)
            tight = CornerBox(
                patch.width - tight.x_max, tight.y_min,
                patch.width - tight.x_min, tight.y_max,
            )
        elif aug == AUG_BRIGHTNESS:
            factor = 1.0 + rng.uniform(-0.25, 0.25)
            patch = ImageEnhance.Brightness(patch).enhance(factor)
        else:
            factor = 1.0 + rng.uniform(-0.25, 0.25)
            patch = ImageEnhance.Contrast(patch).enhance(factor)
    return ObjectCrop(patch, annotation.class_id, tight)


def sample_objects(
    records: list[ImageRecord],
    objects_per_round: int,
    images_per_round: int,
    rng: np.random.Generator,
    image_root: Path | str = ".",
    augmentations: tuple[str, ...] = DEFAULT_AUGS,
    border_range: tuple[int, int] = (10, 15),
) -> list[ObjectCrop]:
    """Pick objects from a few random source images and crop them out.

    Returns up to ``objects_per_round`` crops — fewer when the sampled
    images hold fewer objects.  Unreadable source images are skipped
    with a warning.
    """
    if not records:
        raise ValueError("source dataset is empty")
    image_root = Path(image_root)
    take = min(images_per_round, len(records))
    chosen = rng.choice(len(records), size=take, replace=False)
    pool: list[tuple[ImageRecord, Annotation]] = []
    for idx in sorted(chosen.tolist()):
        record = records[idx]
        pool.extend((record, ann) for ann in record.annotations)
    if not pool:
        return []
    count = min(objects_per_round, len(pool))
    picks = sorted(rng.choice(len(pool), size=count, replace=False).tolist())

    crops = []
    cache: dict[str, Image.Image | None] = {}
    for i in picks:
        record, ann = pool[i]
        if record.image not in cache:
            path = Path(record.image)
            cache[record.image] = _load_image(path if path.is_absolute() else image_root / path)
        image = cache[record.image]
        if image is None:
            continue
        crops.append(extract_crop(image, ann, rng, augmentations, border_range))
    return crops


def _top_area_subsets(areas: list[float], indices: list[int], limit: int):
    """Yield index subsets in non-increasing total-area order, capped.

    Best-first walk of the subset lattice starting from the full set;
    each popped subset spawns children by dropping one member, so every
    subset is reached after a superset of larger total area.
    """
    if not indices:
        return
    full = frozenset(range(len(indices)))
    total = sum(areas[i] for i in indices)
    heap = [(-total, sorted(full))]
    seen = {full}
    emitted = 0
    while heap and emitted < limit:
        neg_area, members = heapq.heappop(heap)
        if members:
            yield [indices[i] for i in members], -neg_area
            emitted += 1
        for drop in members:
            child = frozenset(members) - {drop}
            if child and child not in seen:
                seen.add(child)
                heapq.heappush(
                    heap, (neg_area + areas[indices[drop]], sorted(child))
                )


def _shelf_pack(
    sizes: list[tuple[int, int]], bg_w: int, bg_h: int, rng: np.random.Generator,
    jitter_max: int,
) -> list[tuple[int, int]] | None:
    """Place rectangles left-to-right in shelves with random gaps.

    Returns top-left positions, or None when any rectangle fails to fit.
    Non-overlap holds by construction: x advances by at least the width
    within a shelf and each new shelf starts below the tallest member of
    the previous one.
    """
    positions = []
    x, y, shelf_h = 0, 0, 0
    for w, h in sizes:
        if x > 0:
            x += int(rng.integers(0, jitter_max + 1))
        if x + w > bg_w:
            y += shelf_h + int(rng.integers(0, jitter_max + 1))
            x, shelf_h = 0, 0
        if x + w > bg_w or y + h > bg_h:
            return None
        positions.append((x, y))
        x += w
        shelf_h = max(shelf_h, h)
    return positions


def select_layout(
    crops: list[ObjectCrop],
    bg_w: int,
    bg_h: int,
    rng: np.random.Generator,
    coverage_target: float = 0.4,
    max_subsets: int = 512,
    jitter_max: int = 8,
) -> Layout:
    """Choose a crop subset and pack it onto the background without overlap.

    Subsets are tried largest total area first; the first one that packs
    and reaches ``coverage_target`` wins.  If none reaches the target the
    feasible packing with the best coverage is returned; if nothing fits
    at all the layout comes back flagged as skipped.
    """
    bg_area = float(bg_w * bg_h)
    fits = [
        i for i, c in enumerate(crops)
        if c.patch.width <= bg_w and c.patch.height <= bg_h
    ]
    if not fits:
        return Layout(skipped=True)
    areas = [float(c.patch.width * c.patch.height) for c in crops]

    best: Layout | None = None
    for subset, total_area in _top_area_subsets(areas, fits, max_subsets):
        if total_area > bg_area:
            continue
        order = [subset[i] for i in rng.permutation(len(subset))]
        sizes = [(crops[i].patch.width, crops[i].patch.height) for i in order]
        positions = _shelf_pack(sizes, bg_w, bg_h, rng, jitter_max)
        if positions is None:
            continue
        layout = Layout(
            [Placement(crops[i], px, py) for i, (px, py) in zip(order, positions)],
            coverage=total_area / bg_area,
        )
        if layout.coverage >= coverage_target:
            return layout
        if best is None or layout.coverage > best.coverage:
            best = layout
    return best if best is not None else Layout(skipped=True)


def compose(
    background: Image.Image, placements: list[Placement]
) -> tuple[Image.Image, list[Annotation]]:
    """Paste patches opaquely and translate their tight boxes along.

    One annotation per placement; with no placements the background
    comes back unchanged.
    """
    canvas = background.convert("RGB").copy()
    annotations = []
    for p in placements:
        canvas.paste(p.crop.patch, (p.x, p.y))
        t = p.crop.tight
        annotations.append(
            Annotation(
                Box(
                    p.x + (t.x_min + t.x_max) / 2,
                    p.y + (t.y_min + t.y_max) / 2,
                    t.x_max - t.x_min,
                    t.y_max - t.y_min,
                ),
                p.crop.class_id,
            )
        )
    return canvas, annotations


def _synthesize_one(
    index: int,
    cfg: SynthesisConfig,
    records: list[ImageRecord],
    backgrounds: list[Path],
    image_root: Path,
    images_dir: Path,
    attempts: int = 10,
) -> ImageRecord | None:
    """Generate output image ``index`` from its own derived random stream."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    name = f"synth_{index:06d}.png"
    background = None
    result = None
    for _ in range(attempts):
        background = _load_image(backgrounds[int(rng.integers(len(backgrounds)))])
        if background is None:
            continue
        crops = sample_objects(
            records, cfg.objects_per_round, cfg.images_per_round, rng,
            image_root, cfg.augmentations, cfg.border_range,
        )
        if not crops:
            continue
        layout = select_layout(
            crops, background.width, background.height, rng,
            cfg.coverage_target, cfg.max_subsets, cfg.jitter_max,
        )
        if layout.skipped or not layout.placements:
            continue
        result = compose(background, layout.placements)
        break
    if result is None:
        if background is None:
            return None
        log.warning("image %d: no feasible layout, emitting bare background", index)
        result = (background, [])
    image, annotations = result
    image.save(images_dir / name)
    return ImageRecord(f"images/{name}", image.width, image.height, annotations)


def _worker(args):
    return _synthesize_one(*args)


def synthesize_dataset(
    cfg: SynthesisConfig,
    records: list[ImageRecord],
    background_dir: Path | str,
    out_dir: Path | str,
    image_root: Path | str = ".",
    jobs: int = 1,
) -> list[ImageRecord]:
    """Generate ``cfg.output_count`` labeled images plus a manifest.

    Writes ``images/synth_*.png`` and ``manifest.jsonl`` under
    ``out_dir``.  Identical config and inputs reproduce identical bytes
    regardless of ``jobs``.
    """
    if not records:
        raise ValueError("source dataset is empty")
    backgrounds = sorted(
        p for p in Path(background_dir).iterdir() if p.suffix.lower() in IMAGE_EXTS
    )
    if not backgrounds:
        raise ValueError(f"no background images found in {background_dir}")
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    tasks = [
        (i, cfg, records, backgrounds, Path(image_root), images_dir)
        for i in range(cfg.output_count)
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_worker, tasks, chunksize=16))
    else:
        results = [_synthesize_one(*t) for t in tasks]

    out_records = [r for r in results if r is not None]
    if cfg.output_count > 0 and not out_records:
        raise ValueError("synthesis produced no images; check inputs")
    write_manifest(out_records, out_dir / "manifest.jsonl")
    return out_records


def class_histogram(records: list[ImageRecord]) -> dict[int, int]:
    """Annotation count per class over a record list."""
    out: dict[int, int] = {}
    for r in records:
        for ann in r.annotations:
            out[ann.class_id] = out.get(ann.class_id, 0) + 1
    return out
