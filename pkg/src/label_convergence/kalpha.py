"""Krippendorff's alpha for localized annotations.

Instances are matched across annotators per image and IoU threshold; every
matched unit contributes its category values to one dataset-wide coincidence
matrix. Annotators of the image that did not contribute to a unit enter it
with the filler value :data:`FILLER` (category id 0), which lowers agreement
when somebody misses an object the others found.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data_model import Category, DatasetView, MultiAnnotatedDataset, StructureError, as_view
from .matching import MatchedUnit, cost_matrix, hungarian, iou_matrix, match_multi, match_pair

__all__ = [
    "DEFAULT_THRESHOLDS",
    "FILLER",
    "AlphaComponents",
    "CoincidenceMatrix",
    "KAlphaEvaluator",
    "KAlphaResult",
    "alpha_nominal",
    "build_coincidence",
    "interpret_alpha",
    "kalpha_localized",
    "nominal_components",
    "unit_values",
]

FILLER = 0
DEFAULT_THRESHOLDS: tuple[float, ...] = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))


@dataclass
class CoincidenceMatrix:
    """Symmetric tally ``o[c, k]`` over ``labels`` (category ids, 0 = filler)."""

    labels: tuple[int, ...]
    counts: np.ndarray

    @property
    def marginals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def n(self) -> float:
        return float(self.counts.sum())

    def get(self, c: int, k: int) -> float:
        idx = {lab: i for i, lab in enumerate(self.labels)}
        if c not in idx or k not in idx:
            return 0.0
        return float(self.counts[idx[c], idx[k]])

    def n_c(self, c: int) -> float:
        if c not in self.labels:
            return 0.0
        return float(self.marginals[self.labels.index(c)])

    def __add__(self, other: "CoincidenceMatrix") -> "CoincidenceMatrix":
        labels = tuple(sorted(set(self.labels) | set(other.labels)))
        pos = {lab: i for i, lab in enumerate(labels)}
        out = np.zeros((len(labels), len(labels)))
        for m in (self, other):
            ix = np.array([pos[lab] for lab in m.labels], dtype=int)
            out[np.ix_(ix, ix)] += m.counts
        return CoincidenceMatrix(labels, out)


@dataclass(frozen=True)
class AlphaComponents:
    alpha: float
    observed_disagreement: float
    expected_disagreement: float
    n: float
    degenerate: bool = False


def unit_values(unit: MatchedUnit, roster: Sequence[str] | None = None, use_filler: bool = True) -> list[int]:
    """Category values of a unit, padded with fillers for absent annotators."""
    values = [inst.category_id for _, inst in sorted(unit.members.items())]
    if use_filler and roster is not None:
        values += [FILLER] * sum(1 for a in roster if a not in unit.members)
    return values


def _tally(values_per_unit: Iterable[Sequence[int]], labels: Sequence[int]) -> np.ndarray:
    pos = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)))
    for values in values_per_unit:
        m = len(values)
        if m < 2:
            continue
        vals, freq = np.unique([pos[v] for v in values], return_counts=True)
        block = np.outer(freq, freq).astype(float)
        block[np.diag_indices_from(block)] -= freq
        counts[np.ix_(vals, vals)] += block / (m - 1)
    return counts


def build_coincidence(
    units: Iterable[MatchedUnit],
    categories: Iterable[Category | int] = (),
    *,
    rosters: dict | Sequence[str] | None = None,
    use_filler: bool = True,
) -> CoincidenceMatrix:
    """Coincidence matrix of matched units.

    Each unit with ``m`` values adds every ordered pair of distinct positions
    with weight ``1 / (m - 1)``. ``rosters`` gives the annotators of each image,
    either one roster for all units or a mapping ``image_id -> roster``; with
    fillers enabled, units are padded to the roster size. Without a roster a
    unit only holds its real members.
    """
    units = list(units)

    def roster_of(unit):
        if rosters is None:
            return None
        if isinstance(rosters, dict):
            return rosters[unit.image_id]
        return rosters

    values = [unit_values(u, roster_of(u), use_filler) for u in units]
    labels = {c.id if isinstance(c, Category) else int(c) for c in categories}
    for vs in values:
        labels.update(vs)
    if use_filler:
        labels.add(FILLER)
    ordered = tuple(sorted(labels))
    return CoincidenceMatrix(ordered, _tally(values, ordered))


def _components(diag_sum: float, marginals: np.ndarray, n: float) -> AlphaComponents:
    if n < 2:
        raise ValueError(f"alpha needs at least two pairable values, got n = {n}")
    sum_nc = float(np.sum(marginals * (marginals - 1)))
    numerator = (n - 1) * diag_sum - sum_nc
    denominator = n * (n - 1) - sum_nc
    d_o = (n - diag_sum) / n
    d_e = (n * n - float(np.sum(marginals**2))) / (n * (n - 1))
    if abs(denominator) <= 1e-12 * n * n:
        return AlphaComponents(1.0, d_o, d_e, n, degenerate=True)
    return AlphaComponents(numerator / denominator, d_o, d_e, n)


def nominal_components(m: CoincidenceMatrix) -> AlphaComponents:
    return _components(float(np.trace(m.counts)), m.marginals, m.n)


def alpha_nominal(m: CoincidenceMatrix) -> float:
    """Nominal alpha, ``[(n-1) sum o_cc - sum n_c(n_c-1)] / [n(n-1) - sum n_c(n_c-1)]``.

    A matrix holding a single value has no expected disagreement; alpha is
    reported as 1 there (see :attr:`AlphaComponents.degenerate`).
    """
    return nominal_components(m).alpha


def interpret_alpha(alpha: float) -> str:
    if alpha >= 0.8:
        return "reliable"
    if alpha >= 0.667:
        return "acceptable"
    if alpha > 0:
        return "low"
    if alpha == 0:
        return "chance"
    return "systematic disagreement"


@dataclass
class KAlphaResult:
    thresholds: tuple[float, ...]
    alphas: list[float]
    observed_disagreement: list[float]
    expected_disagreement: list[float]
    n_units: list[int]
    n_values: list[float]
    degenerate: list[bool] = field(default_factory=list)

    @property
    def mean_alpha(self) -> float:
        return float(np.mean(self.alphas))

    def alpha_at(self, threshold: float) -> float:
        return self.alphas[self.thresholds.index(threshold)]

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "alpha": self.alphas,
            "mean_alpha": self.mean_alpha,
            "observed_disagreement": self.observed_disagreement,
            "expected_disagreement": self.expected_disagreement,
            "n_units": self.n_units,
            "n_values": self.n_values,
            "degenerate": self.degenerate,
            "interpretation": [interpret_alpha(a) for a in self.alphas],
        }


class KAlphaEvaluator:
    """Per-image matching cache for repeated alpha evaluation on image subsets.

    For every image and threshold only the diagonal and marginals of the
    image's coincidence matrix are kept; they are all that alpha needs and
    they add up across images.
    """

    def __init__(
        self,
        data: MultiAnnotatedDataset | DatasetView,
        thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
        task: str = "det",
        *,
        use_filler: bool = True,
        representative: str = "union",
    ):
        self.view = as_view(data)
        self.thresholds = tuple(float(t) for t in thresholds)
        if not self.thresholds or not all(0 < t <= 1 for t in self.thresholds):
            raise ValueError("IoU thresholds must lie in (0, 1]")
        self.task = task
        self.use_filler = use_filler
        self.representative = representative
        labels = [FILLER] + [c.id for c in self.view.categories]
        self._pos = {lab: i for i, lab in enumerate(labels)}
        self._n_labels = len(labels)
        self._cache: dict[int, list[tuple[np.ndarray, np.ndarray, np.ndarray, int]]] = {}

    def units(self, image_id: int, threshold: float) -> list[MatchedUnit]:
        roster = self.view.roster(image_id)
        if len(roster) < 2:
            raise StructureError(
                f"image {image_id} has {len(roster)} annotator(s); agreement needs at least 2", [image_id]
            )
        per = self.view.annotations_by_annotator(image_id)
        region = lambda inst: self.view.region(inst, self.task)  # noqa: E731
        if len(roster) == 2:
            a, b = roster
            return match_pair(per[a], per[b], threshold, region=region, annotators=(a, b))
        return match_multi(per, threshold, region=region, representative=self.representative)

    def _image_stats(self, image_id: int):
        cached = self._cache.get(image_id)
        if cached is not None:
            return cached
        roster = self.view.roster(image_id)
        if len(roster) < 2:
            raise StructureError(
                f"image {image_id} has {len(roster)} annotator(s); agreement needs at least 2", [image_id]
            )
        per = self.view.annotations_by_annotator(image_id)
        region = lambda inst: self.view.region(inst, self.task)  # noqa: E731
        if len(roster) == 2:
            a, b = roster
            ious = iou_matrix([region(x) for x in per[a]], [region(x) for x in per[b]])
            assignment = hungarian(cost_matrix(ious))
        stats = []
        for t in self.thresholds:
            if len(roster) == 2:
                units = match_pair(
                    per[a], per[b], t, region=region, annotators=(a, b), ious=ious, assignment=assignment
                )
            else:
                units = match_multi(per, t, region=region, representative=self.representative)
            stats.append(self._unit_stats(units, roster))
        self._cache[image_id] = stats
        return stats

    def _unit_stats(self, units: list[MatchedUnit], roster: Sequence[str]):
        diag: dict[int, float] = {}
        marg: dict[int, float] = {}
        n_units = 0
        for unit in units:
            values = unit_values(unit, roster, self.use_filler)
            m = len(values)
            if m < 2:
                continue
            n_units += 1
            idx, freq = np.unique([self._pos[v] for v in values], return_counts=True)
            for i, f in zip(idx.tolist(), freq.tolist()):
                diag[i] = diag.get(i, 0.0) + f * (f - 1) / (m - 1)
                marg[i] = marg.get(i, 0.0) + f
        keys = np.array(sorted(marg), dtype=int)
        return (
            keys,
            np.array([diag.get(k, 0.0) for k in keys.tolist()]),
            np.array([marg[k] for k in keys.tolist()]),
            n_units,
        )

    def evaluate(self, image_ids: Iterable[int] | None = None) -> KAlphaResult:
        ids = self.view.image_ids if image_ids is None else tuple(image_ids)
        bad = [i for i in ids if len(self.view.roster(i)) < 2]
        if bad:
            raise StructureError(f"{len(bad)} image(s) have fewer than 2 annotators: {bad[:10]}", bad)
        per_image = [self._image_stats(i) for i in ids]
        result = KAlphaResult(self.thresholds, [], [], [], [], [], [])
        for k in range(len(self.thresholds)):
            parts = [s[k] for s in per_image]
            if parts:
                keys = np.concatenate([p[0] for p in parts])
                diag = np.bincount(keys, np.concatenate([p[1] for p in parts]), minlength=self._n_labels)
                marg = np.bincount(keys, np.concatenate([p[2] for p in parts]), minlength=self._n_labels)
            else:
                diag = marg = np.zeros(self._n_labels)
            comp = _components(float(diag.sum()), marg, float(marg.sum()))
            result.alphas.append(comp.alpha)
            result.observed_disagreement.append(comp.observed_disagreement)
            result.expected_disagreement.append(comp.expected_disagreement)
            result.n_units.append(int(sum(p[3] for p in parts)))
            result.n_values.append(comp.n)
            result.degenerate.append(comp.degenerate)
        return result

    def coincidence(self, threshold: float, image_ids: Iterable[int] | None = None) -> CoincidenceMatrix:
        """Full pooled coincidence matrix at one threshold (for inspection)."""
        ids = self.view.image_ids if image_ids is None else tuple(image_ids)
        units: list[MatchedUnit] = []
        rosters = {}
        for i in ids:
            rosters[i] = self.view.roster(i)
            units.extend(self.units(i, threshold))
        cats = [c.id for c in self.view.categories]
        return build_coincidence(units, cats, rosters=rosters, use_filler=self.use_filler)


def kalpha_localized(
    data: MultiAnnotatedDataset | DatasetView,
    iou_thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    task: str = "det",
    *,
    use_filler: bool = True,
    representative: str = "union",
) -> KAlphaResult:
    """Dataset-wide alpha at each IoU threshold, plus their mean."""
    view = as_view(data)
    return KAlphaEvaluator(
        view, iou_thresholds, task, use_filler=use_filler, representative=representative
    ).evaluate(view.image_ids)
