"""Hierarchical classification of annotator disagreements.

For every pair of annotators of an image the instances go through five
stages, and whatever a stage matches is removed before the next one:

1. same-class matching, highest IoU first, down to the threshold;
2. same-class matching where the remaining instances of each class and
   annotator are also offered as one merged instance (merge/split issues);
3. cross-class matching of the remaining single instances (wrong class);
4. like stage 2 but across classes (merge/split issue with a wrong class);
5. everything left is a missing or additional instance.

Stage-1 matches with IoU below ``high_quality`` (0.95 by default) are counted
as bad-boundary matches rather than correct ones. With three or more
annotators every pair is classified and the counts are averaged over pairs.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .data_model import DatasetView, Instance, MultiAnnotatedDataset, StructureError, as_view
from .geometry import Region, iou, union_region
from .kalpha import DEFAULT_THRESHOLDS

__all__ = [
    "BoundaryHistogram",
    "PairOutcome",
    "VariationCounts",
    "VariationReport",
    "boundary_histogram",
    "classify_image",
    "classify_pair",
    "variation_report",
]

HIGH_QUALITY_IOU = 0.95
HISTOGRAM_EDGES = tuple(round(0.5 + 0.05 * k, 2) for k in range(11))


@dataclass
class VariationCounts:
    """Instance counts per variation type (``type2_wrong_class`` counts pairs)."""

    correct_matches: float = 0.0
    type1_bad_boundary: float = 0.0
    type2_wrong_class: float = 0.0
    type5_merge: float = 0.0
    type5_merge_wrong_class: float = 0.0
    type3_missed: float = 0.0
    unmatched_total: float = 0.0
    total_instances: float = 0.0
    missed_by_annotator: dict[str, float] = field(default_factory=dict)

    _SCALARS = (
        "correct_matches",
        "type1_bad_boundary",
        "type2_wrong_class",
        "type5_merge",
        "type5_merge_wrong_class",
        "type3_missed",
        "unmatched_total",
        "total_instances",
    )

    def __iadd__(self, other: "VariationCounts") -> "VariationCounts":
        for name in self._SCALARS:
            setattr(self, name, getattr(self, name) + getattr(other, name))
        for ann, v in other.missed_by_annotator.items():
            self.missed_by_annotator[ann] = self.missed_by_annotator.get(ann, 0.0) + v
        return self

    def scaled(self, factor: float) -> "VariationCounts":
        out = VariationCounts(**{n: getattr(self, n) * factor for n in self._SCALARS})
        out.missed_by_annotator = {a: v * factor for a, v in self.missed_by_annotator.items()}
        return out

    def accounted(self) -> float:
        """Instances covered by all buckets; equals ``total_instances``."""
        return (
            self.correct_matches
            + self.type1_bad_boundary
            + 2 * self.type2_wrong_class
            + self.type5_merge
            + self.type5_merge_wrong_class
            + self.type3_missed
        )

    def shares(self) -> dict[str, float]:
        """Fraction of instances in each bucket (stacked-bar data)."""
        total = self.total_instances
        parts = {
            "correct": self.correct_matches,
            "type1_bad_boundary": self.type1_bad_boundary,
            "type2_wrong_class": 2 * self.type2_wrong_class,
            "type3_missed_or_additional": self.type3_missed,
            "type5_merge": self.type5_merge,
            "type5_merge_wrong_class": self.type5_merge_wrong_class,
        }
        return {k: (v / total if total else 0.0) for k, v in parts.items()}

    def to_dict(self) -> dict:
        d = {n: getattr(self, n) for n in self._SCALARS}
        d["missed_by_annotator"] = dict(sorted(self.missed_by_annotator.items()))
        return d


@dataclass
class PairOutcome:
    """Result of classifying one annotator pair on one image."""

    counts: VariationCounts
    stage1_ious: list[float]
    stages: dict[int, list[tuple[tuple[int, ...], tuple[int, ...], float]]]


@dataclass
class _Candidate:
    members: tuple[int, ...]  # instance ids
    category_id: int
    region: Region

    @property
    def merged(self) -> bool:
        return len(self.members) > 1


def _singletons(insts: Iterable[Instance], region) -> list[_Candidate]:
    return [_Candidate((x.id,), x.category_id, region(x)) for x in insts]


def _merged(insts: Sequence[Instance], region) -> list[_Candidate]:
    by_class: dict[int, list[Instance]] = {}
    for x in insts:
        by_class.setdefault(x.category_id, []).append(x)
    out = []
    for cid in sorted(by_class):
        group = by_class[cid]
        if len(group) > 1:
            out.append(
                _Candidate(tuple(sorted(x.id for x in group)), cid, union_region([region(x) for x in group]))
            )
    return out


def _greedy(
    cands_a: list[_Candidate],
    cands_b: list[_Candidate],
    threshold: float,
    allow: Callable[[_Candidate, _Candidate], bool],
) -> list[tuple[_Candidate, _Candidate, float]]:
    scored = []
    for ca in cands_a:
        for cb in cands_b:
            if not allow(ca, cb):
                continue
            v = iou(ca.region, cb.region)
            if v >= threshold:
                scored.append((-v, ca.members[0], cb.members[0], len(ca.members), len(cb.members), ca, cb))
    scored.sort(key=lambda s: s[:5])
    used: set[int] = set()
    out = []
    for neg, _, _, _, _, ca, cb in scored:
        if used.intersection(ca.members) or used.intersection(cb.members):
            continue
        used.update(ca.members)
        used.update(cb.members)
        out.append((ca, cb, -neg))
    return out


def classify_pair(
    set_a: Sequence[Instance],
    set_b: Sequence[Instance],
    iou_threshold: float,
    *,
    region: Callable[[Instance], Region] = lambda x: x.box,
    high_quality: float = HIGH_QUALITY_IOU,
    annotators: tuple[str, str] = ("A", "B"),
) -> PairOutcome:
    """Run the five matching stages for one annotator pair."""
    remaining_a = {x.id: x for x in sorted(set_a, key=lambda x: x.id)}
    remaining_b = {x.id: x for x in sorted(set_b, key=lambda x: x.id)}
    counts = VariationCounts(total_instances=float(len(remaining_a) + len(remaining_b)))
    stages: dict[int, list] = {}

    def consume(matches, stage):
        stages[stage] = [(ca.members, cb.members, v) for ca, cb, v in matches]
        for ca, cb, _ in matches:
            for i in ca.members:
                del remaining_a[i]
            for i in cb.members:
                del remaining_b[i]

    same = lambda ca, cb: ca.category_id == cb.category_id  # noqa: E731
    other = lambda ca, cb: ca.category_id != cb.category_id  # noqa: E731

    # 1. correct class
    m1 = _greedy(_singletons(remaining_a.values(), region), _singletons(remaining_b.values(), region), iou_threshold, same)
    consume(m1, 1)
    stage1_ious = [v for _, _, v in m1]
    for _, _, v in m1:
        if v >= high_quality:
            counts.correct_matches += 2
        else:
            counts.type1_bad_boundary += 2

    # 2. merged/unmerged with the correct class
    def with_merged(remaining):
        insts = list(remaining.values())
        return _singletons(insts, region) + _merged(insts, region)

    m2 = _greedy(
        with_merged(remaining_a),
        with_merged(remaining_b),
        iou_threshold,
        lambda ca, cb: same(ca, cb) and (ca.merged or cb.merged),
    )
    consume(m2, 2)
    counts.type5_merge = float(sum(len(ca.members) + len(cb.members) for ca, cb, _ in m2))

    # 3. wrong class
    m3 = _greedy(_singletons(remaining_a.values(), region), _singletons(remaining_b.values(), region), iou_threshold, other)
    consume(m3, 3)
    counts.type2_wrong_class = float(len(m3))

    # 4. merged/unmerged with a wrong class
    m4 = _greedy(
        with_merged(remaining_a),
        with_merged(remaining_b),
        iou_threshold,
        lambda ca, cb: other(ca, cb) and (ca.merged or cb.merged),
    )
    consume(m4, 4)
    counts.type5_merge_wrong_class = float(sum(len(ca.members) + len(cb.members) for ca, cb, _ in m4))

    # 5. missing or additional
    counts.type3_missed = float(len(remaining_a) + len(remaining_b))
    counts.missed_by_annotator = {annotators[0]: float(len(remaining_a)), annotators[1]: float(len(remaining_b))}
    counts.unmatched_total = counts.total_instances - counts.correct_matches - counts.type1_bad_boundary
    return PairOutcome(counts, stage1_ious, stages)


def classify_image(
    sets: Mapping[str, Sequence[Instance]],
    iou_threshold: float,
    *,
    region: Callable[[Instance], Region] = lambda x: x.box,
    high_quality: float = HIGH_QUALITY_IOU,
) -> VariationCounts:
    """Variation counts of one image, averaged over annotator pairs."""
    return _classify_image(sets, iou_threshold, region, high_quality)[0]


def _classify_image(sets, iou_threshold, region, high_quality):
    annotators = sorted(sets)
    if len(annotators) < 2:
        raise StructureError(f"variation analysis needs at least 2 annotators, got {len(annotators)}")
    pairs = list(itertools.combinations(annotators, 2))
    total = VariationCounts()
    ious: list[float] = []
    for a, b in pairs:
        out = classify_pair(
            sets[a], sets[b], iou_threshold, region=region, high_quality=high_quality, annotators=(a, b)
        )
        total += out.counts
        ious.extend(out.stage1_ious)
    weight = 1.0 / len(pairs)
    return total.scaled(weight), ious, weight


@dataclass
class BoundaryHistogram:
    edges: tuple[float, ...]
    counts: list[float]
    exact_one: float
    spike_fraction: float = 0.05

    @property
    def total(self) -> float:
        return float(sum(self.counts))

    @property
    def exact_one_share(self) -> float:
        return self.exact_one / self.total if self.total else 0.0

    @property
    def duplicate_spike(self) -> bool:
        """Flag an unusual share of IoU 1.0 matches (possible copied labels)."""
        return self.total > 0 and self.exact_one_share > self.spike_fraction

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lower", "bin_upper", "count"])
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            w.writerow([f"{lo:.2f}", f"{hi:.2f}", _num(c)])
        w.writerow(["1.00", "1.00", _num(self.exact_one)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "edges": list(self.edges),
            "counts": list(self.counts),
            "exact_one": self.exact_one,
            "exact_one_share": self.exact_one_share,
            "duplicate_spike": self.duplicate_spike,
        }


def boundary_histogram(ious: Sequence[float], weights: Sequence[float] | None = None) -> BoundaryHistogram:
    """Histogram of stage-1 IoUs over ``[0.5, 1.0]`` in 0.05 bins (last bin closed)."""
    v = np.asarray(ious, dtype=float)
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float)
    counts, _ = np.histogram(v, bins=np.asarray(HISTOGRAM_EDGES), weights=w)
    return BoundaryHistogram(HISTOGRAM_EDGES, counts.astype(float).tolist(), float(w[v >= 1.0].sum()))


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass
class VariationReport:
    thresholds: tuple[float, ...]
    counts: dict[float, VariationCounts]
    histogram: BoundaryHistogram
    n_images: int
    task: str = "det"

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "n_images": self.n_images,
            "thresholds": list(self.thresholds),
            "counts": {f"{t:.2f}": self.counts[t].to_dict() for t in self.thresholds},
            "shares": {f"{t:.2f}": self.counts[t].shares() for t in self.thresholds},
            "boundary_histogram": self.histogram.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        """One row per threshold and variation type."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "type", "count", "share"])
        for t in self.thresholds:
            c = self.counts[t]
            shares = c.shares()
            rows = [
                ("correct", c.correct_matches, shares["correct"]),
                ("type1_bad_boundary", c.type1_bad_boundary, shares["type1_bad_boundary"]),
                ("type2_wrong_class_pairs", c.type2_wrong_class, shares["type2_wrong_class"]),
                ("type3_missed_or_additional", c.type3_missed, shares["type3_missed_or_additional"]),
                ("type5_merge", c.type5_merge, shares["type5_merge"]),
                ("type5_merge_wrong_class", c.type5_merge_wrong_class, shares["type5_merge_wrong_class"]),
                ("unmatched_total", c.unmatched_total, c.unmatched_total / c.total_instances if c.total_instances else 0.0),
            ]
            for name, count, share in rows:
                w.writerow([f"{t:.2f}", name, _num(count), f"{share:.6f}"])
        return buf.getvalue()


def variation_report(
    data: MultiAnnotatedDataset | DatasetView,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    task: str = "det",
    *,
    high_quality: float = HIGH_QUALITY_IOU,
    histogram_threshold: float = 0.5,
) -> VariationReport:
    """Aggregate :func:`classify_image` over a view, plus the boundary histogram.

    The histogram collects stage-1 IoUs at ``histogram_threshold``; with
    three or more annotators each pair's entries are weighted by
    ``1 / number of pairs`` like the counts.
    """
    view = as_view(data)
    region = lambda inst: view.region(inst, task)  # noqa: E731
    thresholds = tuple(float(t) for t in thresholds)
    totals = {t: VariationCounts() for t in thresholds}
    hist_ious: list[float] = []
    hist_w: list[float] = []
    for image_id in view.image_ids:
        sets = view.annotations_by_annotator(image_id)
        for t in thresholds:
            counts, ious, weight = _classify_image(sets, t, region, high_quality)
            totals[t] += counts
            if t == histogram_threshold:
                hist_ious.extend(ious)
                hist_w.extend([weight] * len(ious))
        if histogram_threshold not in thresholds:
            _, ious, weight = _classify_image(sets, histogram_threshold, region, high_quality)
            hist_ious.extend(ious)
            hist_w.extend([weight] * len(ious))
    return VariationReport(thresholds, totals, boundary_histogram(hist_ious, hist_w), len(view), task)
