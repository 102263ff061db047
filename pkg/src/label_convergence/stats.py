"""Bootstrap sampling distributions and the alpha-to-mAP regression."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .data_model import DatasetView, MultiAnnotatedDataset, as_view

__all__ = [
    "Z_95",
    "BootstrapError",
    "BootstrapSummary",
    "FitError",
    "RegressionModel",
    "bootstrap",
    "bootstrap_replicates",
    "fit_linear",
    "infer_map",
    "normal_ci",
    "pearson",
    "r_squared",
    "replicate_plan",
    "sample_size",
    "summarize",
    "worker_count",
]

Z_95 = 1.96
THREADS_ENV = "LC_TOOLKIT_THREADS"


class BootstrapError(RuntimeError):
    def __init__(self, index: int, seed: int, cause: BaseException):
        super().__init__(f"metric failed on replicate {index} (replicate seed {seed}): {cause!r}")
        self.index = index
        self.seed = seed


class FitError(ValueError):
    """Regression or correlation is undefined for the given points."""


def normal_ci(mean: float, std: float, z: float = Z_95) -> tuple[float, float]:
    return mean - z * std, mean + z * std


@dataclass
class BootstrapSummary:
    values: list[float]
    mean: float
    std: float
    min: float
    max: float
    ci_lower: float
    ci_upper: float
    replicates: int
    fraction: float | None = None
    seed: int | None = None
    sample_size: int | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "replicates": self.replicates,
            "fraction": self.fraction,
            "sample_size": self.sample_size,
            "seed": self.seed,
            "values": list(self.values),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BootstrapSummary":
        return cls(
            values=[float(v) for v in d["values"]],
            mean=float(d["mean"]),
            std=float(d["std"]),
            min=float(d["min"]),
            max=float(d["max"]),
            ci_lower=float(d["ci_lower"]),
            ci_upper=float(d["ci_upper"]),
            replicates=int(d["replicates"]),
            fraction=d.get("fraction"),
            seed=d.get("seed"),
            sample_size=d.get("sample_size"),
            metadata=dict(d.get("metadata", {})),
        )


def summarize(values: Sequence[float], **extra: Any) -> BootstrapSummary:
    """Mean, sample std (ddof=1), range and normal 95% interval of ``values``."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("cannot summarize an empty replicate list")
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    lo, hi = normal_ci(mean, std)
    return BootstrapSummary(
        values=arr.tolist(),
        mean=mean,
        std=std,
        min=float(arr.min()),
        max=float(arr.max()),
        ci_lower=lo,
        ci_upper=hi,
        replicates=int(arr.size),
        **extra,
    )


def sample_size(n_images: int, fraction: float) -> int:
    """Images per replicate: ``fraction * n`` rounded half up."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    k = int(math.floor(fraction * n_images + 0.5))
    if k < 1:
        raise ValueError(f"fraction {fraction} of {n_images} images leaves an empty sample")
    return k


def worker_count(workers: int | None = None) -> int:
    cap = os.environ.get(THREADS_ENV)
    n = workers if workers is not None else (os.cpu_count() or 1)
    if cap:
        n = min(n, max(int(cap), 1))
    return max(int(n), 1)


def replicate_plan(
    image_ids: Sequence[int],
    replicates: int,
    fraction: float,
    seed: int,
    with_replacement: bool = False,
) -> list[tuple[tuple[int, ...], int]]:
    """Image subset and metric seed of every replicate.

    Replicate ``i`` draws from its own stream ``SeedSequence(seed).spawn()[i]``,
    so the plan does not depend on how replicates are scheduled.
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    ids = np.asarray(image_ids)
    k = sample_size(len(ids), fraction)
    plan = []
    for child in np.random.SeedSequence(seed).spawn(replicates):
        rng = np.random.default_rng(child)
        pick = rng.choice(len(ids), size=k, replace=with_replacement)
        if not with_replacement:
            pick = np.sort(pick)
        metric_seed = int(child.generate_state(1, dtype=np.uint32)[0])
        plan.append((tuple(ids[pick].tolist()), metric_seed))
    return plan


def bootstrap_replicates(
    data: MultiAnnotatedDataset | DatasetView,
    metric: Callable[[DatasetView, int], Any],
    replicates: int = 1000,
    fraction: float = 0.10,
    seed: int = 0,
    *,
    with_replacement: bool = False,
    workers: int | None = None,
) -> list[Any]:
    """Raw metric outputs of every replicate, in replicate order."""
    view = as_view(data)
    plan = replicate_plan(view.image_ids, replicates, fraction, seed, with_replacement)

    def run(i: int):
        ids, metric_seed = plan[i]
        try:
            return metric(view.subsample(ids), metric_seed)
        except Exception as exc:
            raise BootstrapError(i, metric_seed, exc) from exc

    n = worker_count(workers)
    if n == 1:
        return [run(i) for i in range(replicates)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(run, range(replicates)))


def bootstrap(
    data: MultiAnnotatedDataset | DatasetView,
    metric: Callable[[DatasetView, int], float],
    replicates: int = 1000,
    fraction: float = 0.10,
    seed: int = 0,
    *,
    with_replacement: bool = False,
    workers: int | None = None,
) -> BootstrapSummary:
    """Evaluate ``metric(view, replicate_seed)`` on random image subsets.

    Each replicate takes ``round(fraction * n)`` distinct images (or a draw
    with replacement for sensitivity checks). The interval is
    ``mean -/+ 1.96 * std``.
    """
    view = as_view(data)
    values = bootstrap_replicates(
        view, metric, replicates, fraction, seed, with_replacement=with_replacement, workers=workers
    )
    return summarize(
        [float(v) for v in values],
        fraction=fraction,
        seed=seed,
        sample_size=sample_size(len(view), fraction),
        metadata={"with_replacement": with_replacement},
    )


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size != y.size or x.size < 2:
        raise FitError("pearson needs two equally long samples of at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0 or syy == 0:
        raise FitError("correlation undefined for a sample with zero variance")
    return float(np.dot(dx, dy)) / math.sqrt(sxx * syy)


@dataclass
class RegressionModel:
    slope: float
    intercept: float
    pearson: float
    r_squared: float
    n_points: int
    metadata: dict = field(default_factory=dict)

    def predict(self, alpha):
        return self.slope * np.asarray(alpha, dtype=float) + self.intercept

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "pearson": self.pearson,
            "r_squared": self.r_squared,
            "n_points": self.n_points,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionModel":
        return cls(
            float(d["slope"]),
            float(d["intercept"]),
            float(d.get("pearson", float("nan"))),
            float(d.get("r_squared", float("nan"))),
            int(d.get("n_points", 0)),
            dict(d.get("metadata", {})),
        )


def r_squared(model: RegressionModel, points: Sequence[tuple[float, float]]) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise FitError("R^2 needs at least 2 points")
    y = pts[:, 1]
    resid = y - model.predict(pts[:, 0])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise FitError("R^2 undefined when the response has zero variance")
    return 1.0 - float(np.sum(resid**2)) / ss_tot


def fit_linear(points: Sequence[tuple[float, float]], **metadata: Any) -> RegressionModel:
    """Ordinary least squares ``mAP = slope * alpha + intercept``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise FitError("need at least two points")
    x, y = pts[:, 0], pts[:, 1]
    dx = x - x.mean()
    sxx = float(np.dot(dx, dx))
    if sxx == 0:
        raise FitError("all alpha values are equal; slope undefined")
    slope = float(np.dot(dx, y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    if np.ptp(y) == 0:
        rho, r2 = float("nan"), float("nan")
    else:
        rho = pearson(x, y)
        model = RegressionModel(slope, intercept, rho, 0.0, len(pts))
        r2 = r_squared(model, pts)
    return RegressionModel(slope, intercept, rho, r2, len(pts), dict(metadata))


def infer_map(model: RegressionModel, alpha, scale: float = 1.0):
    """Map alpha to mAP with the fitted line.

    A scalar gives a scalar. A :class:`BootstrapSummary` of alpha values is
    transformed replicate by replicate and summarised again, so the interval
    is empirical. ``scale=100`` reports on the 0-100 mAP scale.
    """
    if isinstance(alpha, BootstrapSummary):
        values = scale * (model.slope * np.asarray(alpha.values, dtype=float) + model.intercept)
        meta = dict(alpha.metadata)
        meta["inferred_from"] = "alpha"
        meta["model"] = model.to_dict()
        return summarize(
            values.tolist(),
            fraction=alpha.fraction,
            seed=alpha.seed,
            sample_size=alpha.sample_size,
            metadata=meta,
        )
    return scale * (model.slope * float(alpha) + model.intercept)
