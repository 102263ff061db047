"""Cross-annotator instance matching.

Two annotators are paired with an optimal assignment on ``1 - IoU`` costs,
the smaller set padded with null instances of cost 1.0. Assigned pairs below
the IoU threshold are split into singletons. Further annotators are attached
greedily to the units built so far.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .data_model import Instance
from .geometry import Region, iou, union_region

__all__ = [
    "MatchedUnit",
    "cost_matrix",
    "hungarian",
    "iou_matrix",
    "match_multi",
    "match_pair",
    "assignment_cost",
]

PAD_COST = 1.0


@dataclass
class MatchedUnit:
    """Instances from different annotators judged to be the same object.

    ``members`` maps annotator id to instance; annotators of the image that
    are absent from ``members`` hold the null (missing) entry.
    """

    unit_id: int
    image_id: int | None
    members: dict[str, Instance]
    ious: tuple[float, ...] = ()

    @property
    def m_u(self) -> int:
        return len(self.members)

    def slot(self, annotator: str) -> Instance | None:
        return self.members.get(annotator)

    def instance_ids(self) -> frozenset[int]:
        return frozenset(inst.id for inst in self.members.values())


def hungarian(cost: np.ndarray | Sequence[Sequence[float]]) -> np.ndarray:
    """Minimum-cost perfect assignment of a square cost matrix.

    Returns ``perm`` with row ``i`` assigned to column ``perm[i]``. Shortest
    augmenting paths are grown row by row in index order and, among equally
    cheap columns, the lowest index is taken, so results are deterministic.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {c.shape}")
    n = c.shape[0]
    if n == 0:
        return np.empty(0, dtype=int)
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite")

    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row (1-based) holding column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            used_cols = np.flatnonzero(used)
            u[p[used_cols]] += delta
            v[used_cols] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    perm = np.empty(n, dtype=int)
    perm[p[1:] - 1] = np.arange(n)
    return perm


def assignment_cost(cost: np.ndarray, perm: Sequence[int]) -> float:
    """Exactly rounded total cost of an assignment."""
    c = np.asarray(cost, dtype=float)
    return math.fsum(c[i, j] for i, j in enumerate(perm))


def iou_matrix(regions_a: Sequence[Region], regions_b: Sequence[Region]) -> np.ndarray:
    out = np.zeros((len(regions_a), len(regions_b)))
    for i, ra in enumerate(regions_a):
        for j, rb in enumerate(regions_b):
            out[i, j] = iou(ra, rb)
    return out


def cost_matrix(ious: np.ndarray) -> np.ndarray:
    """Square ``1 - IoU`` matrix padded with null entries of cost 1.0."""
    ious = np.asarray(ious, dtype=float)
    ma, mb = ious.shape
    n = max(ma, mb)
    cost = np.full((n, n), PAD_COST)
    cost[:ma, :mb] = 1.0 - ious
    return cost


def _default_region(inst: Instance) -> Region:
    return inst.box


def _annotator_label(insts: Sequence[Instance], fallback: str) -> str:
    return insts[0].annotator if insts else fallback


def match_pair(
    set_a: Sequence[Instance],
    set_b: Sequence[Instance],
    iou_threshold: float = 0.5,
    *,
    region: Callable[[Instance], Region] = _default_region,
    annotators: tuple[str, str] | None = None,
    ious: np.ndarray | None = None,
    assignment: np.ndarray | None = None,
) -> list[MatchedUnit]:
    """Pair two annotators' instances of one image.

    ``ious`` and ``assignment`` may be passed in to reuse work across
    thresholds; the assignment does not depend on the threshold.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError(f"IoU threshold must lie in (0, 1], got {iou_threshold}")
    a_label, b_label = annotators or (_annotator_label(set_a, "A"), _annotator_label(set_b, "B"))
    if ious is None:
        ious = iou_matrix([region(x) for x in set_a], [region(x) for x in set_b])
    if assignment is None:
        assignment = hungarian(cost_matrix(ious))
    image_id = set_a[0].image_id if set_a else (set_b[0].image_id if set_b else None)

    units: list[MatchedUnit] = []
    paired_b: set[int] = set()
    for i, inst in enumerate(set_a):
        j = int(assignment[i])
        if j < len(set_b) and ious[i, j] >= iou_threshold:
            paired_b.add(j)
            units.append(
                MatchedUnit(len(units), image_id, {a_label: inst, b_label: set_b[j]}, (float(ious[i, j]),))
            )
        else:
            units.append(MatchedUnit(len(units), image_id, {a_label: inst}))
    for j, inst in enumerate(set_b):
        if j not in paired_b:
            units.append(MatchedUnit(len(units), image_id, {b_label: inst}))
    return units


def match_multi(
    sets: Mapping[str, Sequence[Instance]],
    iou_threshold: float = 0.5,
    *,
    region: Callable[[Instance], Region] = _default_region,
    representative: str = "union",
) -> list[MatchedUnit]:
    """Match any number of annotators on one image.

    The first two annotators (in sorted id order) are paired optimally. Each
    further annotator's instances are then attached greedily: instances are
    visited in descending order of their best IoU with an eligible unit (ties
    by instance id) and join the unit with the highest IoU that does not
    already hold that annotator. The unit's representative region is the
    union of its members, or its first member with
    ``representative="first"``.
    """
    if representative not in ("union", "first"):
        raise ValueError(f"unknown representative {representative!r}")
    order = sorted(sets)
    if not order:
        return []
    if len(order) == 1:
        only = sets[order[0]]
        image_id = only[0].image_id if only else None
        return [MatchedUnit(k, image_id, {order[0]: inst}) for k, inst in enumerate(only)]

    units = match_pair(
        sets[order[0]], sets[order[1]], iou_threshold, region=region, annotators=(order[0], order[1])
    )
    image_id = next((u.image_id for u in units if u.image_id is not None), None)

    def rep(unit: MatchedUnit) -> Region:
        members = list(unit.members.values())
        if representative == "first":
            return region(members[0])
        return union_region([region(m) for m in members])

    for ann in order[2:]:
        insts = list(sets[ann])
        if not insts:
            continue
        if image_id is None:
            image_id = insts[0].image_id
        reps = [rep(u) for u in units]
        scores = iou_matrix([region(x) for x in insts], reps) if units else np.zeros((len(insts), 0))
        eligible = scores >= iou_threshold
        best = np.where(eligible, scores, -1.0).max(axis=1) if units else np.full(len(insts), -1.0)
        visit = sorted(range(len(insts)), key=lambda k: (-best[k], insts[k].id))
        taken: set[int] = set()
        leftovers: list[Instance] = []
        for k in visit:
            row = np.where(eligible[k], scores[k], -1.0)
            for t in taken:
                row[t] = -1.0
            if row.size == 0 or row.max() < 0:
                leftovers.append(insts[k])
                continue
            target = int(np.argmax(row))
            taken.add(target)
            unit = units[target]
            unit.members[ann] = insts[k]
            unit.ious = unit.ious + (float(scores[k, target]),)
        leftovers.sort(key=lambda x: x.id)
        for inst in leftovers:
            units.append(MatchedUnit(len(units), image_id, {ann: inst}))
    for unit in units:
        unit.image_id = image_id if unit.image_id is None else unit.image_id
    return units
