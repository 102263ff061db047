"""Modified mAP between two human annotators.

One annotator of each image plays ground truth and the other plays the
detector. All human annotations carry the same confidence, so detections are
ranked by confidence and then by ascending instance id. Per category, the
detections of all images are pooled into one precision/recall curve and AP is
the mean of the 101-point interpolated precision (COCO convention), reported
on a 0-100 scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data_model import Category, DatasetView, Instance, MultiAnnotatedDataset, StructureError, as_view
from .kalpha import DEFAULT_THRESHOLDS
from .matching import iou_matrix

__all__ = [
    "RECALL_POINTS",
    "ROLE_MODES",
    "MapEvaluator",
    "MapResult",
    "PrCurve",
    "ap_single",
    "draw_roles",
    "greedy_match",
    "interpolated_ap",
    "modified_map",
    "pr_curve",
]

RECALL_POINTS = 101
ROLE_MODES = ("per-image", "per-replicate", "first-gt", "second-gt")


def greedy_match(ious: np.ndarray, threshold: float) -> np.ndarray:
    """Mark detections (rows, already in rank order) as true positives.

    Each detection takes the unmatched ground truth (column) with the highest
    IoU at or above ``threshold``; ties go to the lowest column.
    """
    nd, ng = ious.shape
    tp = np.zeros(nd, dtype=bool)
    if ng == 0:
        return tp
    taken = np.zeros(ng, dtype=bool)
    for d in range(nd):
        row = np.where(taken, -1.0, ious[d])
        g = int(np.argmax(row))
        if row[g] >= threshold:
            taken[g] = True
            tp[d] = True
    return tp


def interpolated_ap(groups: np.ndarray, tp: np.ndarray, n_gt: np.ndarray) -> np.ndarray:
    """101-point interpolated AP per group, as a fraction in ``[0, 1]``.

    ``groups`` must be sorted (detections of one category contiguous and in
    rank order). Groups without ground truth get ``nan``. Recall thresholds
    ``k/100`` are compared exactly with integer arithmetic.
    """
    n_groups = len(n_gt)
    n_gt = np.asarray(n_gt, dtype=np.int64)
    ap = np.where(n_gt > 0, 0.0, np.nan)
    nd = len(tp)
    if nd == 0:
        return ap
    groups = np.asarray(groups, dtype=np.int64)
    arange = np.arange(n_groups)
    starts = np.searchsorted(groups, arange, side="left")
    ends = np.searchsorted(groups, arange, side="right")

    cum = np.cumsum(tp.astype(np.int64))
    base = np.where(starts > 0, cum[np.maximum(starts - 1, 0)], 0)
    tpc = cum - base[groups]
    seen = np.arange(nd) - starts[groups] + 1
    precision = tpc / seen

    # running max from the right, restarted at every group boundary
    shifted = precision - 2.0 * groups
    envelope = np.maximum.accumulate(shifted[::-1])[::-1] + 2.0 * groups

    valid = (n_gt > 0) & (ends > starts)
    g = np.flatnonzero(valid)
    if g.size == 0:
        return ap
    k = np.arange(RECALL_POINTS, dtype=np.int64)
    need = (k[None, :] * n_gt[g][:, None] + RECALL_POINTS - 2) // (RECALL_POINTS - 1)
    stride = int(n_gt.max()) + 2
    keys = groups * stride + tpc
    probe = g[:, None] * stride + need
    pos = np.searchsorted(keys, probe.ravel(), side="left").reshape(probe.shape)
    inside = pos < ends[g][:, None]
    q = np.where(inside, envelope[np.minimum(pos, nd - 1)], 0.0)
    ap[g] = q.mean(axis=1)
    return ap


@dataclass
class PrCurve:
    tp: np.ndarray
    n_gt: int
    precision: np.ndarray
    recall: np.ndarray
    interpolated: np.ndarray
    recall_points: np.ndarray

    @property
    def ap(self) -> float:
        return float(self.interpolated.mean()) if self.n_gt else float("nan")


def pr_curve(tp: Sequence[bool], n_gt: int) -> PrCurve:
    """Precision/recall curve of ranked detections plus its 101-point envelope."""
    tp = np.asarray(tp, dtype=bool)
    cum = np.cumsum(tp)
    seen = np.arange(1, len(tp) + 1)
    precision = cum / seen if len(tp) else np.zeros(0)
    recall = cum / n_gt if n_gt else np.zeros(len(tp))
    points = np.arange(RECALL_POINTS) / (RECALL_POINTS - 1)
    interp = np.zeros(RECALL_POINTS)
    if n_gt and len(tp):
        env = np.maximum.accumulate(precision[::-1])[::-1]
        need = (np.arange(RECALL_POINTS) * n_gt + RECALL_POINTS - 2) // (RECALL_POINTS - 1)
        pos = np.searchsorted(cum, need, side="left")
        interp = np.where(pos < len(tp), env[np.minimum(pos, len(tp) - 1)], 0.0)
    return PrCurve(tp, int(n_gt), precision, recall, interp, points)


def _rank_order(insts: Sequence[Instance]) -> list[Instance]:
    return sorted(insts, key=lambda x: (-x.source_confidence, x.id))


def ap_single(
    gt: Sequence[Instance],
    pred: Sequence[Instance],
    category: Category | int,
    iou_threshold: float = 0.5,
    *,
    region=None,
) -> float:
    """AP (0-100) of ``pred`` against ``gt`` for one category.

    Instances may span several images; matching stays within an image and the
    curve pools all detections. Returns ``nan`` when the category has no
    ground truth.
    """
    cid = category.id if isinstance(category, Category) else int(category)
    region = region or (lambda inst: inst.box)
    gt = [g for g in gt if g.category_id == cid]
    pred = [p for p in pred if p.category_id == cid]
    if not gt:
        return float("nan")
    flags = []
    for image_id in sorted({x.image_id for x in gt} | {x.image_id for x in pred}):
        dets = _rank_order([p for p in pred if p.image_id == image_id])
        gts = sorted((g for g in gt if g.image_id == image_id), key=lambda x: x.id)
        ious = iou_matrix([region(d) for d in dets], [region(g) for g in gts])
        flags.extend(zip([(-d.source_confidence, d.id) for d in dets], greedy_match(ious, iou_threshold)))
    flags.sort(key=lambda f: f[0])
    return 100.0 * pr_curve([f[1] for f in flags], len(gt)).ap


@dataclass
class MapResult:
    """AP per category and threshold, on a 0-100 scale."""

    thresholds: tuple[float, ...]
    category_ids: tuple[int, ...]
    ap: np.ndarray  # (n_categories, n_thresholds), nan where a category has no ground truth
    map_per_threshold: np.ndarray
    hull_comparisons: int = 0

    @property
    def map(self) -> float:
        return float(np.mean(self.map_per_threshold))

    def at(self, threshold: float) -> float:
        return float(self.map_per_threshold[self.thresholds.index(threshold)])

    def category_ap(self, category_id: int) -> np.ndarray:
        return self.ap[self.category_ids.index(category_id)]

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "map": self.map,
            "map_per_threshold": self.map_per_threshold.tolist(),
            "category_ap": {
                str(c): [None if np.isnan(v) else float(v) for v in row]
                for c, row in zip(self.category_ids, self.ap)
                if not np.all(np.isnan(row))
            },
            "hull_comparisons": self.hull_comparisons,
        }


def draw_roles(n_images: int, seed: int | None, role_mode: str = "per-image") -> np.ndarray:
    """Index (0 or 1) of the roster member playing ground truth, per image."""
    if role_mode == "first-gt":
        return np.zeros(n_images, dtype=np.int64)
    if role_mode == "second-gt":
        return np.ones(n_images, dtype=np.int64)
    rng = np.random.default_rng(seed)
    if role_mode == "per-image":
        return rng.integers(0, 2, size=n_images)
    if role_mode == "per-replicate":
        return np.full(n_images, rng.integers(0, 2), dtype=np.int64)
    raise ValueError(f"unknown role mode {role_mode!r}; expected one of {ROLE_MODES}")


class MapEvaluator:
    """Caches per-image matching so many image subsets can be scored cheaply.

    For each image and role the cache keeps, per detection, its category
    index, score, id and true-positive flag at every threshold, together with
    the category indices of the ground truth.
    """

    def __init__(
        self,
        data: MultiAnnotatedDataset | DatasetView,
        thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
        task: str = "det",
    ):
        self.view = as_view(data)
        self.thresholds = tuple(float(t) for t in thresholds)
        if not self.thresholds or not all(0 < t <= 1 for t in self.thresholds):
            raise ValueError("IoU thresholds must lie in (0, 1]")
        self.task = task
        self.category_ids = tuple(c.id for c in self.view.categories)
        self._cat_pos = {c: i for i, c in enumerate(self.category_ids)}
        self._cache: dict[tuple[int, int], tuple] = {}
        self._hull: dict[tuple[int, int], int] = {}

    def check_two_annotators(self, image_ids: Iterable[int]) -> None:
        bad = [i for i in image_ids if len(self.view.roster(i)) != 2]
        if bad:
            raise StructureError(
                f"modified mAP needs exactly 2 annotators per image; {len(bad)} image(s) differ, e.g. {bad[:10]}",
                bad,
            )

    def _image(self, image_id: int, role: int):
        key = (image_id, role)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        roster = self.view.roster(image_id)
        gt_all = self.view.instances_for(image_id, roster[role])
        pred_all = self.view.instances_for(image_id, roster[1 - role])
        det_cat, det_score, det_id, det_tp = [], [], [], []
        hull = 0
        for cid in sorted({x.category_id for x in pred_all}):
            dets = _rank_order([p for p in pred_all if p.category_id == cid])
            gts = sorted((g for g in gt_all if g.category_id == cid), key=lambda x: x.id)
            rd = [self.view.region(d, self.task) for d in dets]
            rg = [self.view.region(g, self.task) for g in gts]
            hull += sum(type(a) is not type(b) for a in rd for b in rg)
            ious = iou_matrix(rd, rg)
            det_tp.append(np.stack([greedy_match(ious, t) for t in self.thresholds]))
            det_cat.extend([self._cat_pos[cid]] * len(dets))
            det_score.extend(d.source_confidence for d in dets)
            det_id.extend(d.id for d in dets)
        tp = np.concatenate(det_tp, axis=1) if det_tp else np.zeros((len(self.thresholds), 0), dtype=bool)
        gt_cat = np.array([self._cat_pos[g.category_id] for g in gt_all], dtype=np.int64)
        entry = (
            np.array(det_cat, dtype=np.int64),
            np.array(det_score, dtype=float),
            np.array(det_id, dtype=np.int64),
            tp,
            gt_cat,
        )
        self._cache[key] = entry
        self._hull[key] = hull
        return entry

    def evaluate(self, image_ids: Sequence[int], roles: Sequence[int]) -> MapResult:
        image_ids = tuple(image_ids)
        self.check_two_annotators(image_ids)
        parts = [self._image(i, int(r)) for i, r in zip(image_ids, roles)]
        n_cat = len(self.category_ids)
        n_t = len(self.thresholds)
        if parts:
            cat = np.concatenate([p[0] for p in parts])
            score = np.concatenate([p[1] for p in parts])
            ids = np.concatenate([p[2] for p in parts])
            tp = np.concatenate([p[3] for p in parts], axis=1)
            n_gt = np.bincount(np.concatenate([p[4] for p in parts]), minlength=n_cat)
        else:
            cat = ids = np.zeros(0, dtype=np.int64)
            score = np.zeros(0)
            tp = np.zeros((n_t, 0), dtype=bool)
            n_gt = np.zeros(n_cat, dtype=np.int64)
        order = np.lexsort((ids, -score, cat))
        cat = cat[order]
        ap = np.empty((n_cat, n_t))
        for k in range(n_t):
            ap[:, k] = interpolated_ap(cat, tp[k, order], n_gt)
        ap *= 100.0
        per_t = np.empty(n_t)
        for k in range(n_t):
            col = ap[:, k]
            if np.any(~np.isnan(col)):
                per_t[k] = np.nanmean(col)
            else:
                # no ground truth at all: any detection is a false positive
                per_t[k] = 0.0 if cat.size else np.nan
        hull = sum(self._hull[(i, int(r))] for i, r in set(zip(image_ids, roles)))
        return MapResult(self.thresholds, self.category_ids, ap, per_t, hull)

    def evaluate_seeded(
        self, image_ids: Sequence[int], seed: int | None, role_mode: str = "per-image"
    ) -> MapResult:
        return self.evaluate(image_ids, draw_roles(len(image_ids), seed, role_mode))


def modified_map(
    data: MultiAnnotatedDataset | DatasetView,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    seed: int | None = 0,
    *,
    task: str = "det",
    role_mode: str = "per-image",
) -> MapResult:
    """Modified mAP of a two-annotator view with seeded ground-truth roles."""
    view = as_view(data)
    return MapEvaluator(view, thresholds, task).evaluate_seeded(view.image_ids, seed, role_mode)
