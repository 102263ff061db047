"""Seeded synthetic multi-annotator datasets for tests and demos."""

from __future__ import annotations

import numpy as np

from .data_model import Category, ImageRecord, Instance, MultiAnnotatedDataset
from .geometry import encode_rle

__all__ = ["make_dataset"]


def make_dataset(
    n_images: int = 10,
    n_categories: int = 3,
    annotators: tuple[str, ...] = ("A", "B"),
    *,
    objects_per_image: tuple[int, int] = (1, 5),
    jitter: float = 0.0,
    p_miss: float = 0.0,
    p_wrong_class: float = 0.0,
    masks: bool = False,
    size: tuple[int, int] = (64, 64),
    seed: int = 0,
) -> MultiAnnotatedDataset:
    """Images with latent objects that every annotator labels with noise.

    With all noise parameters at zero every annotator produces identical
    geometry and classes, i.e. a duplicated-annotator dataset. ``jitter`` moves
    box corners by up to that fraction of the box size; ``p_miss`` drops an
    object for one annotator; ``p_wrong_class`` relabels it. Masks (when
    requested) are the exact box rasters, stored as uncompressed RLE.
    """
    rng = np.random.default_rng(seed)
    height, width = size
    images = [ImageRecord(i + 1, width, height, f"img_{i + 1:05d}.png") for i in range(n_images)]
    categories = [Category(c + 1, f"class_{c + 1}") for c in range(n_categories)]
    instances: list[Instance] = []
    next_id = 1
    for im in images:
        n_obj = int(rng.integers(objects_per_image[0], objects_per_image[1] + 1))
        objects = []
        for _ in range(n_obj):
            w = int(rng.integers(6, width // 2))
            h = int(rng.integers(6, height // 2))
            x = int(rng.integers(0, width - w))
            y = int(rng.integers(0, height - h))
            objects.append(((x, y, w, h), int(rng.integers(1, n_categories + 1))))
        for ann in annotators:
            for (x, y, w, h), cat in objects:
                if p_miss and rng.random() < p_miss:
                    continue
                if p_wrong_class and n_categories > 1 and rng.random() < p_wrong_class:
                    cat = int(rng.choice([c for c in range(1, n_categories + 1) if c != cat]))
                if jitter:
                    dx0, dy0, dx1, dy1 = (rng.uniform(-jitter, jitter, 4) * [w, h, w, h]).round()
                    x0 = int(np.clip(x + dx0, 0, width - 2))
                    y0 = int(np.clip(y + dy0, 0, height - 2))
                    x1 = int(np.clip(x + w + dx1, x0 + 1, width))
                    y1 = int(np.clip(y + h + dy1, y0 + 1, height))
                    box = (float(x0), float(y0), float(x1 - x0), float(y1 - y0))
                else:
                    box = (float(x), float(y), float(w), float(h))
                seg = None
                if masks:
                    full = np.zeros((height, width), dtype=bool)
                    bx, by, bw, bh = (int(v) for v in box)
                    full[by : by + bh, bx : bx + bw] = True
                    seg = encode_rle(full)
                instances.append(Instance(next_id, im.id, ann, cat, box, seg))
                next_id += 1
    rosters = {im.id: list(annotators) for im in images}
    return MultiAnnotatedDataset(images, categories, instances, rosters)
