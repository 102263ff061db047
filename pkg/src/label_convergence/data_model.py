"""Multi-annotator dataset schema, ingestion and validation.

The canonical on-disk form is COCO object-detection JSON where every
annotation carries an ``annotator_id`` string. Two other layouts are accepted
and normalised into it:

* one COCO file per annotator, merged by image ``file_name``
  (:func:`load_annotator_files`);
* a single file where an anonymous field splits the annotations of each image
  into two groups, mapped to the generic ids ``"A"`` and ``"B"``
  (``IngestConfig.group_field``).

The annotator roster of an image is taken from, in order of preference, the
image's own ``"annotators"`` list, a top-level ``"annotators"`` list, or the
annotators that produced instances on that image. Rosters matter because an
annotator may legitimately leave an image empty.
"""

from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .geometry import Box, GeometryError, Mask, Region, box_iou_matrix, decode_rle, mask_from_polygons

__all__ = [
    "HUMAN_CONFIDENCE",
    "Category",
    "DatasetView",
    "ImageRecord",
    "IngestConfig",
    "Instance",
    "MultiAnnotatedDataset",
    "ReferentialIntegrityError",
    "RosterError",
    "SchemaError",
    "StructureError",
    "ValidationReport",
    "as_view",
    "dataset_from_coco",
    "load_annotator_files",
    "load_dataset",
    "subsample",
    "validate",
]

HUMAN_CONFIDENCE = 0.99


class SchemaError(ValueError):
    """The input file does not follow the documented JSON layout."""


class ReferentialIntegrityError(ValueError):
    """An annotation points to an image or category that does not exist."""


class RosterError(ValueError):
    """An image has no annotator assigned to it."""


class StructureError(ValueError):
    """A metric was asked to run on images with an unsuitable annotator count."""

    def __init__(self, message: str, image_ids: Sequence[int] = ()):
        super().__init__(message)
        self.image_ids = list(image_ids)


@dataclass(frozen=True)
class Category:
    id: int
    name: str


@dataclass(frozen=True)
class ImageRecord:
    id: int
    width: int
    height: int
    file_name: str = ""


@dataclass(frozen=True)
class Instance:
    id: int
    image_id: int
    annotator: str
    category_id: int
    bbox: tuple[float, float, float, float]
    segmentation: Any = None
    source_confidence: float = HUMAN_CONFIDENCE

    @property
    def box(self) -> Box:
        return Box(*self.bbox)


@dataclass
class IngestConfig:
    """Options for :func:`load_dataset` and :func:`load_annotator_files`.

    ``category_map`` maps source category ids to target ids (for example a
    LVIS v0.5 to v1.0 remapping supplied by the user); it may be a mapping or
    the path of a JSON object file.
    """

    annotator_field: str = "annotator_id"
    group_field: str | None = None
    category_map: Mapping[int, int] | str | os.PathLike | None = None
    confidence: float = HUMAN_CONFIDENCE


class MultiAnnotatedDataset:
    """Images, categories and per-annotator instance sets.

    The object is treated as immutable once built. Region rasterisation is
    cached internally; the cache never changes observable values.
    """

    def __init__(
        self,
        images: Iterable[ImageRecord],
        categories: Iterable[Category],
        instances: Iterable[Instance],
        rosters: Mapping[int, Sequence[str]] | None = None,
    ):
        self.images: tuple[ImageRecord, ...] = tuple(sorted(images, key=lambda im: im.id))
        self.categories: tuple[Category, ...] = tuple(sorted(categories, key=lambda c: c.id))
        self.instances: tuple[Instance, ...] = tuple(sorted(instances, key=lambda a: a.id))
        self._images_by_id = {im.id: im for im in self.images}
        self._categories_by_id = {c.id: c for c in self.categories}

        seen: dict[int, list[str]] = defaultdict(list)
        index: dict[int, dict[str, list[Instance]]] = defaultdict(lambda: defaultdict(list))
        for inst in self.instances:
            if inst.annotator not in seen[inst.image_id]:
                seen[inst.image_id].append(inst.annotator)
            index[inst.image_id][inst.annotator].append(inst)

        self._rosters: dict[int, tuple[str, ...]] = {}
        for im in self.images:
            roster = list(rosters.get(im.id, ())) if rosters else []
            for ann in seen.get(im.id, ()):
                if ann not in roster:
                    roster.append(ann)
            self._rosters[im.id] = tuple(sorted(roster))

        self._index: dict[int, dict[str, tuple[Instance, ...]]] = {}
        for im in self.images:
            per = index.get(im.id, {})
            self._index[im.id] = {ann: tuple(per.get(ann, ())) for ann in self._rosters[im.id]}
        # instances whose image does not exist stay reachable for validation
        self._orphans = tuple(inst for inst in self.instances if inst.image_id not in self._images_by_id)

        self.annotators: tuple[str, ...] = tuple(sorted({a for r in self._rosters.values() for a in r}))
        self._region_cache: dict[tuple[int, str], Region] = {}

    # -- lookup -------------------------------------------------------------

    @property
    def image_ids(self) -> tuple[int, ...]:
        return tuple(im.id for im in self.images)

    def image(self, image_id: int) -> ImageRecord:
        return self._images_by_id[image_id]

    def category(self, category_id: int) -> Category:
        return self._categories_by_id[category_id]

    def has_category(self, category_id: int) -> bool:
        return category_id in self._categories_by_id

    def roster(self, image_id: int) -> tuple[str, ...]:
        return self._rosters[image_id]

    def annotations_by_annotator(self, image_id: int) -> dict[str, tuple[Instance, ...]]:
        return self._index[image_id]

    def instances_for(self, image_id: int, annotator: str | None = None) -> tuple[Instance, ...]:
        per = self._index[image_id]
        if annotator is not None:
            return per.get(annotator, ())
        return tuple(sorted((i for insts in per.values() for i in insts), key=lambda a: a.id))

    def view(self) -> "DatasetView":
        return DatasetView(self, self.image_ids)

    def subsample(self, image_ids: Iterable[int]) -> "DatasetView":
        return self.view().subsample(image_ids)

    def __len__(self) -> int:
        return len(self.images)

    # -- geometry -----------------------------------------------------------

    def region(self, inst: Instance, task: str = "det") -> Region:
        """Region of an instance clamped to its image.

        ``task="segm"`` returns the rasterised mask when the instance has a
        usable one and falls back to the clamped box otherwise.
        """
        key = (inst.id, task)
        cached = self._region_cache.get(key)
        if cached is not None:
            return cached
        im = self._images_by_id[inst.image_id]
        out: Region = inst.box.clamp(im.width, im.height)
        if task == "segm" and inst.segmentation:
            mask = _mask_or_none(inst.segmentation, im)
            if mask is not None:
                out = mask
        elif task not in ("det", "segm"):
            raise ValueError(f"unknown task {task!r}; expected 'det' or 'segm'")
        self._region_cache[key] = out
        return out

    # -- integrity ----------------------------------------------------------

    def check_integrity(self) -> None:
        """Raise on dangling references or images without annotators."""
        for inst in self.instances:
            if inst.image_id not in self._images_by_id:
                raise ReferentialIntegrityError(f"annotation {inst.id} references unknown image_id {inst.image_id}")
            if inst.category_id not in self._categories_by_id:
                raise ReferentialIntegrityError(
                    f"annotation {inst.id} references unknown category_id {inst.category_id}"
                )
        empty = [im.id for im in self.images if not self._rosters[im.id]]
        if empty:
            raise RosterError(f"{len(empty)} image(s) have no annotator in their roster, e.g. image {empty[0]}")

    # -- serialisation ------------------------------------------------------

    def to_coco(self) -> dict:
        images = []
        for im in self.images:
            rec = asdict(im)
            rec["annotators"] = list(self._rosters[im.id])
            images.append(rec)
        annotations = []
        for inst in self.instances:
            ann = {
                "id": inst.id,
                "image_id": inst.image_id,
                "category_id": inst.category_id,
                "annotator_id": inst.annotator,
                "bbox": list(inst.bbox),
            }
            if inst.segmentation is not None:
                ann["segmentation"] = inst.segmentation
            annotations.append(ann)
        return {
            "images": images,
            "categories": [asdict(c) for c in self.categories],
            "annotations": annotations,
        }

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_coco(), fh)


class DatasetView:
    """Read-only restriction of a dataset to a subset of its images."""

    __slots__ = ("dataset", "image_ids")

    def __init__(self, dataset: MultiAnnotatedDataset, image_ids: Sequence[int]):
        self.dataset = dataset
        self.image_ids = tuple(image_ids)

    def subsample(self, image_ids: Iterable[int]) -> "DatasetView":
        ids = tuple(image_ids)
        allowed = set(self.image_ids)
        for i in ids:
            if i not in allowed:
                raise KeyError(f"image id {i} is not part of this view")
        return DatasetView(self.dataset, ids)

    @property
    def categories(self) -> tuple[Category, ...]:
        return self.dataset.categories

    def roster(self, image_id: int) -> tuple[str, ...]:
        return self.dataset.roster(image_id)

    def instances_for(self, image_id: int, annotator: str | None = None) -> tuple[Instance, ...]:
        return self.dataset.instances_for(image_id, annotator)

    def annotations_by_annotator(self, image_id: int) -> dict[str, tuple[Instance, ...]]:
        return self.dataset.annotations_by_annotator(image_id)

    def region(self, inst: Instance, task: str = "det") -> Region:
        return self.dataset.region(inst, task)

    def instances(self) -> Iterator[Instance]:
        for i in self.image_ids:
            yield from self.dataset.instances_for(i)

    def __len__(self) -> int:
        return len(self.image_ids)

    def __iter__(self) -> Iterator[int]:
        return iter(self.image_ids)


def as_view(data: MultiAnnotatedDataset | DatasetView) -> DatasetView:
    if isinstance(data, DatasetView):
        return data
    return data.view()


def subsample(data: MultiAnnotatedDataset | DatasetView, image_ids: Iterable[int]) -> DatasetView:
    return as_view(data).subsample(image_ids)


def _mask_or_none(segmentation: Any, im: ImageRecord) -> Mask | None:
    try:
        if isinstance(segmentation, dict):
            full = decode_rle(segmentation)
            if full.shape != (im.height, im.width):
                raise GeometryError(
                    f"RLE size {list(full.shape)} does not match image {im.id} ({im.height}x{im.width})"
                )
            return Mask.from_full(full)
        return mask_from_polygons(segmentation, im.height, im.width)
    except GeometryError as exc:
        if "does not match" in str(exc):
            raise
        return None


# -- ingestion --------------------------------------------------------------


def _read_json(path: str | os.PathLike) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: top level must be a JSON object")
    for key in ("images", "categories", "annotations"):
        if not isinstance(data.get(key), list):
            raise SchemaError(f"{path}: missing or non-list field '{key}'")
    return data


def _field(rec: Mapping, key: str, where: str, kind: type | tuple[type, ...] = (int, float)) -> Any:
    if not isinstance(rec, Mapping):
        raise SchemaError(f"{where}: expected an object")
    if key not in rec:
        raise SchemaError(f"{where}: missing field '{key}'")
    value = rec[key]
    if isinstance(value, bool) or not isinstance(value, kind):
        raise SchemaError(f"{where}.{key}: unexpected value {value!r}")
    return value


def _parse_images(raw: list, path: Any) -> list[ImageRecord]:
    images = []
    seen = set()
    for i, rec in enumerate(raw):
        where = f"{path}: images[{i}]"
        image_id = _field(rec, "id", where, int)
        width = _field(rec, "width", where)
        height = _field(rec, "height", where)
        if width <= 0 or height <= 0:
            raise SchemaError(f"{where}: width and height must be positive")
        if image_id in seen:
            raise SchemaError(f"{where}: duplicate image id {image_id}")
        seen.add(image_id)
        images.append(ImageRecord(image_id, int(width), int(height), str(rec.get("file_name", ""))))
    return images


def _parse_categories(raw: list, path: Any) -> list[Category]:
    cats = []
    seen = set()
    for i, rec in enumerate(raw):
        where = f"{path}: categories[{i}]"
        cid = _field(rec, "id", where, int)
        name = _field(rec, "name", where, str)
        if cid < 1 or not name:
            raise SchemaError(f"{where}: category ids start at 1 and names must be non-empty")
        if cid in seen:
            raise SchemaError(f"{where}: duplicate category id {cid}")
        seen.add(cid)
        cats.append(Category(cid, name))
    return cats


def _parse_bbox(rec: Mapping, where: str) -> tuple[float, float, float, float]:
    bbox = rec.get("bbox")
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise SchemaError(f"{where}.bbox: expected [x, y, w, h]")
    for v in bbox:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{where}.bbox: non-numeric value {v!r}")
    return tuple(float(v) for v in bbox)  # type: ignore[return-value]


def _load_category_map(mapping: Mapping[int, int] | str | os.PathLike | None) -> dict[int, int]:
    if mapping is None:
        return {}
    if isinstance(mapping, (str, os.PathLike)):
        with open(mapping, encoding="utf-8") as fh:
            mapping = json.load(fh)
    return {int(k): int(v) for k, v in mapping.items()}


def _apply_category_map(categories: list[Category], mapping: dict[int, int]) -> list[Category]:
    if not mapping:
        return categories
    targets = set(mapping.values())
    return [c for c in categories if c.id not in mapping or c.id in targets]


def _build_instances(
    raw: list,
    path: Any,
    annotator_of,
    config: IngestConfig,
    cat_map: dict[int, int],
    image_id_of=lambda v: v,
    id_of=None,
) -> list[Instance]:
    out = []
    for i, rec in enumerate(raw):
        where = f"{path}: annotations[{i}]"
        ann_id = _field(rec, "id", where, int) if id_of is None else id_of(i)
        image_id = image_id_of(_field(rec, "image_id", where, int))
        cat = _field(rec, "category_id", where, int)
        annotator = annotator_of(rec, where)
        bbox = _parse_bbox(rec, where)
        seg = rec.get("segmentation") or None
        out.append(
            Instance(
                id=ann_id,
                image_id=image_id,
                annotator=annotator,
                category_id=cat_map.get(cat, cat),
                bbox=bbox,
                segmentation=seg,
                source_confidence=config.confidence,
            )
        )
    return out


def _rosters_from(data: dict, images: list[ImageRecord]) -> dict[int, list[str]]:
    default = data.get("annotators")
    rosters: dict[int, list[str]] = {}
    for i, rec in enumerate(data["images"]):
        roster = rec.get("annotators", default)
        if roster is None:
            continue
        if not isinstance(roster, list) or not all(isinstance(a, str) and a for a in roster):
            raise SchemaError(f"images[{i}].annotators: expected a list of non-empty strings")
        rosters[images[i].id] = list(roster)
    return rosters


def dataset_from_coco(
    data: dict, config: IngestConfig | None = None, source: Any = "<memory>", *, strict: bool = True
) -> MultiAnnotatedDataset:
    """Build a dataset from an already parsed COCO-style dict.

    With ``strict=False`` dangling references and empty rosters are kept so
    that :func:`validate` can count them instead of the loader raising.
    """
    config = config or IngestConfig()
    for key in ("images", "categories", "annotations"):
        if not isinstance(data.get(key), list):
            raise SchemaError(f"{source}: missing or non-list field '{key}'")
    images = _parse_images(data["images"], source)
    cat_map = _load_category_map(config.category_map)
    categories = _apply_category_map(_parse_categories(data["categories"], source), cat_map)

    if config.group_field is not None:
        group_field = config.group_field
        groups: dict[int, set] = defaultdict(set)
        for i, rec in enumerate(data["annotations"]):
            if group_field not in rec:
                raise SchemaError(f"{source}: annotations[{i}]: missing field '{group_field}'")
            groups[rec.get("image_id")].add(rec[group_field])
        for image_id, gs in groups.items():
            if len(gs) > 2:
                raise SchemaError(f"{source}: image {image_id} has {len(gs)} annotation groups, expected at most 2")
        labels = {img: {g: "AB"[k] for k, g in enumerate(sorted(gs, key=str))} for img, gs in groups.items()}

        def annotator_of(rec, where):
            return labels[rec["image_id"]][rec[group_field]]

        rosters = {im.id: ["A", "B"] for im in images}
    else:
        field_name = config.annotator_field

        def annotator_of(rec, where):
            return str(_field(rec, field_name, where, (str, int)))

        rosters = _rosters_from(data, images)

    instances = _build_instances(data["annotations"], source, annotator_of, config, cat_map)
    ids = [inst.id for inst in instances]
    if len(set(ids)) != len(ids):
        raise SchemaError(f"{source}: duplicate annotation ids")
    ds = MultiAnnotatedDataset(images, categories, instances, rosters)
    if strict:
        ds.check_integrity()
    return ds


def load_dataset(
    path: str | os.PathLike, config: IngestConfig | None = None, *, strict: bool = True
) -> MultiAnnotatedDataset:
    """Load a canonical multi-annotator COCO file."""
    return dataset_from_coco(_read_json(path), config, source=path, strict=strict)


def load_annotator_files(
    files: Mapping[str, str | os.PathLike] | Sequence[str | os.PathLike],
    config: IngestConfig | None = None,
) -> MultiAnnotatedDataset:
    """Merge one COCO file per annotator into a single dataset.

    ``files`` maps annotator ids to paths; a plain sequence gets the generic ids
    ``A``, ``B``, ``C``, ... in order. Images are matched by ``file_name`` and
    take the id and size of their first occurrence. Annotation ids are
    renumbered sequentially in (file, annotation) order. Categories are
    matched by id and must agree in name across files.
    """
    config = config or IngestConfig()
    if not isinstance(files, Mapping):
        files = {chr(ord("A") + k): p for k, p in enumerate(files)}
    cat_map = _load_category_map(config.category_map)

    images: dict[str, ImageRecord] = {}
    categories: dict[int, Category] = {}
    rosters: dict[int, list[str]] = defaultdict(list)
    instances: list[Instance] = []
    next_id = 1
    for annotator, path in files.items():
        data = _read_json(path)
        local_images = _parse_images(data["images"], path)
        local_to_global: dict[int, int] = {}
        for im in local_images:
            if not im.file_name:
                raise SchemaError(f"{path}: image {im.id} has no file_name, cannot merge by name")
            merged = images.setdefault(im.file_name, im)
            local_to_global[im.id] = merged.id
            if annotator not in rosters[merged.id]:
                rosters[merged.id].append(annotator)
        for cat in _parse_categories(data["categories"], path):
            known = categories.setdefault(cat.id, cat)
            if known.name != cat.name:
                raise SchemaError(f"{path}: category {cat.id} named {cat.name!r}, elsewhere {known.name!r}")

        def image_id_of(local, _m=local_to_global, _p=path):
            if local not in _m:
                raise ReferentialIntegrityError(f"{_p}: annotation references unknown image_id {local}")
            return _m[local]

        start = next_id
        batch = _build_instances(
            data["annotations"],
            path,
            lambda rec, where, _a=annotator: _a,
            config,
            cat_map,
            image_id_of=image_id_of,
            id_of=lambda i, _s=start: _s + i,
        )
        next_id += len(batch)
        instances.extend(batch)

    ds = MultiAnnotatedDataset(
        images.values(), _apply_category_map(list(categories.values()), cat_map), instances, rosters
    )
    ds.check_integrity()
    return ds


# -- validation -------------------------------------------------------------


@dataclass
class ValidationReport:
    n_images: int = 0
    n_instances: int = 0
    unresolved_refs: int = 0
    degenerate_boxes: int = 0
    out_of_bounds: int = 0
    suspected_duplicates: int = 0
    mask_bbox_mismatch: int = 0
    empty_masks: int = 0
    images_without_annotator: int = 0
    is_two_annotator: bool = False
    annotators_per_image: float = 0.0
    duplicate_pairs: list[tuple[int, int]] = field(default_factory=list)

    @property
    def has_findings(self) -> bool:
        return any(
            (
                self.unresolved_refs,
                self.degenerate_boxes,
                self.out_of_bounds,
                self.suspected_duplicates,
                self.mask_bbox_mismatch,
                self.empty_masks,
                self.images_without_annotator,
            )
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["duplicate_pairs"] = [list(p) for p in self.duplicate_pairs]
        out["has_findings"] = self.has_findings
        return out


def _mask_bbox_ok(mask: Mask, box: Box, tol: float = 1.0) -> bool:
    mb = mask.bbox()
    return (
        mb.x >= box.x - tol
        and mb.y >= box.y - tol
        and mb.x2 <= box.x2 + tol
        and mb.y2 <= box.y2 + tol
    )


def validate(data: MultiAnnotatedDataset | DatasetView) -> ValidationReport:
    """Count data-quality findings. Never raises and never mutates ``data``.

    Suspected duplicates are instance pairs from different annotators on the
    same image with the same category and a box IoU of exactly 1.0.
    """
    view = as_view(data)
    ds = view.dataset
    report = ValidationReport(n_images=len(view))
    if len(view) == len(ds):
        report.unresolved_refs += len(ds._orphans)
    report.unresolved_refs += sum(
        1 for inst in view.instances() if not ds.has_category(inst.category_id)
    )

    n_roster = []
    for image_id in view.image_ids:
        im = ds.image(image_id)
        roster = ds.roster(image_id)
        n_roster.append(len(roster))
        if not roster:
            report.images_without_annotator += 1
        per = ds.annotations_by_annotator(image_id)
        for inst in ds.instances_for(image_id):
            report.n_instances += 1
            x, y, w, h = inst.bbox
            if not (w > 0 and h > 0):
                report.degenerate_boxes += 1
            if x < 0 or y < 0 or x + w > im.width or y + h > im.height:
                report.out_of_bounds += 1
            if inst.segmentation:
                try:
                    mask = _mask_or_none(inst.segmentation, im)
                except GeometryError:
                    mask = None
                if mask is None:
                    report.empty_masks += 1
                elif not _mask_bbox_ok(mask, inst.box):
                    report.mask_bbox_mismatch += 1

        anns = sorted(per)
        for i, a in enumerate(anns):
            for b in anns[i + 1 :]:
                ia, ib = per[a], per[b]
                if not ia or not ib:
                    continue
                ious = box_iou_matrix([x.bbox for x in ia], [x.bbox for x in ib])
                same = np.array([x.category_id for x in ia])[:, None] == np.array([x.category_id for x in ib])[None, :]
                for r, c in zip(*np.nonzero((ious >= 1.0) & same)):
                    report.duplicate_pairs.append((ia[r].id, ib[c].id))
    report.suspected_duplicates = len(report.duplicate_pairs)
    report.is_two_annotator = bool(n_roster) and all(n == 2 for n in n_roster)
    report.annotators_per_image = float(np.mean(n_roster)) if n_roster else 0.0
    return report
