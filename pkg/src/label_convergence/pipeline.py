"""End-to-end workflows: convergence interval, bootstrapped alpha, regression pool.

These glue the metric evaluators to :mod:`.stats` and are what the command
line calls.
"""

from __future__ import annotations

from typing import Sequence

from .data_model import DatasetView, MultiAnnotatedDataset, as_view
from .kalpha import DEFAULT_THRESHOLDS, KAlphaEvaluator
from .map_metric import MapEvaluator, draw_roles
from .stats import BootstrapSummary, RegressionModel, bootstrap, bootstrap_replicates, fit_linear

__all__ = [
    "convergence_interval",
    "kalpha_bootstrap",
    "regression_points",
    "fit_regression",
]


def convergence_interval(
    data: MultiAnnotatedDataset | DatasetView,
    *,
    task: str = "det",
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    replicates: int = 1000,
    fraction: float = 0.10,
    seed: int = 0,
    role_mode: str = "per-image",
    with_replacement: bool = False,
    workers: int | None = None,
) -> BootstrapSummary:
    """Bootstrap distribution of the modified mAP (0-100).

    The normal 95% interval of the summary is the convergence-threshold
    interval. Every replicate draws fresh ground-truth roles.
    """
    view = as_view(data)
    evaluator = MapEvaluator(view, thresholds, task)
    evaluator.check_two_annotators(view.image_ids)

    def metric(sub: DatasetView, rseed: int) -> float:
        return evaluator.evaluate_seeded(sub.image_ids, rseed, role_mode).map

    summary = bootstrap(
        view, metric, replicates, fraction, seed, with_replacement=with_replacement, workers=workers
    )
    summary.metadata.update({"metric": "modified_map", "task": task, "thresholds": list(thresholds), "role_mode": role_mode})
    return summary


def kalpha_bootstrap(
    data: MultiAnnotatedDataset | DatasetView,
    *,
    task: str = "det",
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    replicates: int = 1000,
    fraction: float = 0.10,
    seed: int = 0,
    with_replacement: bool = False,
    workers: int | None = None,
    use_filler: bool = True,
) -> BootstrapSummary:
    """Bootstrap distribution of alpha averaged over ``thresholds``."""
    view = as_view(data)
    evaluator = KAlphaEvaluator(view, thresholds, task, use_filler=use_filler)

    def metric(sub: DatasetView, rseed: int) -> float:
        return evaluator.evaluate(sub.image_ids).mean_alpha

    summary = bootstrap(
        view, metric, replicates, fraction, seed, with_replacement=with_replacement, workers=workers
    )
    summary.metadata.update({"metric": "kalpha", "task": task, "thresholds": list(thresholds)})
    return summary


def regression_points(
    datasets: Sequence[MultiAnnotatedDataset | DatasetView],
    *,
    task: str = "det",
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    replicates: int = 1000,
    fraction: float = 0.10,
    seed: int = 0,
    role_mode: str = "per-image",
    workers: int | None = None,
) -> list[tuple[float, float]]:
    """``(alpha@t, mAP@t)`` pairs, one per replicate and threshold, pooled.

    mAP is on the 0-1 scale. Both metrics of a pair see the same image subset.
    Dataset ``k`` uses seed ``seed + k``.
    """
    points: list[tuple[float, float]] = []
    for k, data in enumerate(datasets):
        view = as_view(data)
        alpha_eval = KAlphaEvaluator(view, thresholds, task)
        map_eval = MapEvaluator(view, thresholds, task)
        map_eval.check_two_annotators(view.image_ids)

        def metric(sub: DatasetView, rseed: int, _a=alpha_eval, _m=map_eval):
            alphas = _a.evaluate(sub.image_ids).alphas
            roles = draw_roles(len(sub.image_ids), rseed, role_mode)
            maps = _m.evaluate(sub.image_ids, roles).map_per_threshold / 100.0
            return list(zip(alphas, maps.tolist()))

        for rows in bootstrap_replicates(view, metric, replicates, fraction, seed + k, workers=workers):
            points.extend(rows)
    return points


def fit_regression(points: Sequence[tuple[float, float]], **metadata) -> RegressionModel:
    return fit_linear(points, **metadata)
