import json

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from label_convergence.stats import (
    THREADS_ENV,
    BootstrapError,
    BootstrapSummary,
    FitError,
    RegressionModel,
    bootstrap,
    bootstrap_replicates,
    fit_linear,
    infer_map,
    normal_ci,
    pearson,
    r_squared,
    replicate_plan,
    sample_size,
    summarize,
    worker_count,
)
from label_convergence.synthetic import make_dataset

SLOPE, INTERCEPT = 0.836, 0.197


@pytest.fixture(scope="module")
def images():
    return make_dataset(200, 2, objects_per_image=(0, 2), seed=3)


def test_constant_metric(images):
    s = bootstrap(images, lambda view, seed: 50.0, replicates=20, seed=1)
    assert (s.mean, s.std, s.ci_lower, s.ci_upper) == (50.0, 0.0, 50.0, 50.0)


@pytest.mark.parametrize(
    "mean,std,lower,upper",
    [(81.89, 0.82, 80.28, 83.50), (65.08, 1.25, 62.63, 67.53)],
)
def test_ci_rule_on_reported_values(mean, std, lower, upper):
    lo, hi = normal_ci(mean, std)
    assert round(lo, 2) == lower
    assert round(hi, 2) == upper


def test_ci_width_is_exact():
    rng = np.random.default_rng(0)
    s = summarize(rng.normal(10, 2, 500))
    assert s.ci_upper - s.ci_lower == pytest.approx(2 * 1.96 * s.std, rel=1e-15)
    assert s.std == pytest.approx(np.std(s.values, ddof=1))
    assert s.min <= s.mean <= s.max


def test_sample_size_rounding():
    assert sample_size(5000, 0.10) == 500
    assert sample_size(15, 0.10) == 2  # 1.5 rounds up
    assert sample_size(14, 0.10) == 1
    with pytest.raises(ValueError):
        sample_size(4, 0.10)
    with pytest.raises(ValueError):
        sample_size(10, 0.0)


def test_replicates_draw_distinct_images(images):
    for ids, _ in replicate_plan(images.image_ids, 50, 0.1, seed=4):
        assert len(ids) == 20
        assert len(set(ids)) == 20


def test_with_replacement_sensitivity_mode(images):
    plans = replicate_plan(images.image_ids, 200, 0.5, seed=4, with_replacement=True)
    assert any(len(set(ids)) < len(ids) for ids, _ in plans)


def mean_objects(view, seed):
    return float(sum(1 for _ in view.instances())) / len(view) + (seed % 7) * 1e-3


def test_worker_count_does_not_change_results(images):
    one = bootstrap_replicates(images, mean_objects, 64, 0.1, 9, workers=1)
    many = bootstrap_replicates(images, mean_objects, 64, 0.1, 9, workers=8)
    assert one == many
    again = bootstrap_replicates(images, mean_objects, 64, 0.1, 9, workers=3)
    assert again == one


def test_thread_cap_from_environment(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "2")
    assert worker_count(16) == 2
    monkeypatch.delenv(THREADS_ENV)
    assert worker_count(5) == 5


def test_metric_failure_names_replicate(images):
    def metric(view, seed):
        if 7 in view.image_ids:
            raise RuntimeError("boom")
        return 1.0

    with pytest.raises(BootstrapError) as err:
        bootstrap(images, metric, replicates=100, fraction=0.5, seed=0, workers=1)
    plan = replicate_plan(images.image_ids, 100, 0.5, 0)
    first = next(i for i, (ids, _) in enumerate(plan) if 7 in ids)
    assert err.value.index == first
    assert err.value.seed == plan[first][1]


def test_summary_round_trip():
    s = summarize([1.0, 2.0, 4.0], fraction=0.1, seed=3, sample_size=5)
    assert BootstrapSummary.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def test_exact_line_regression():
    xs = np.linspace(0.3, 0.95, 40)
    model = fit_linear([(x, SLOPE * x + INTERCEPT) for x in xs])
    assert model.slope == pytest.approx(SLOPE, abs=1e-9)
    assert model.intercept == pytest.approx(INTERCEPT, abs=1e-9)
    assert model.pearson == pytest.approx(1.0, abs=1e-9)
    assert model.r_squared == pytest.approx(1.0, abs=1e-9)


def test_two_points_fit_perfectly():
    model = fit_linear([(0.2, 0.4), (0.6, 0.5)])
    assert model.predict(0.2) == pytest.approx(0.4)
    assert model.predict(0.6) == pytest.approx(0.5)
    assert model.r_squared == pytest.approx(1.0)


def test_degenerate_fits():
    with pytest.raises(FitError):
        fit_linear([(0.5, 0.1), (0.5, 0.3)])
    with pytest.raises(FitError):
        fit_linear([(0.5, 0.1)])
    with pytest.raises(FitError):
        pearson([1, 1, 1], [1, 2, 3])


def test_pearson_signs():
    xs = [0.1, 0.4, 0.5, 0.9]
    assert pearson(xs, xs) == pytest.approx(1.0)
    assert pearson(xs, [-x for x in xs]) == pytest.approx(-1.0)


def test_pearson_against_high_precision():
    xs = [0.61, 0.72, 0.55, 0.83, 0.79]
    ys = [0.70, 0.79, 0.62, 0.88, 0.83]
    with mpmath.workdps(50):
        mx, my = mpmath.fsum(map(mpmath.mpf, xs)) / 5, mpmath.fsum(map(mpmath.mpf, ys)) / 5
        sxy = mpmath.fsum((mpmath.mpf(x) - mx) * (mpmath.mpf(y) - my) for x, y in zip(xs, ys))
        sxx = mpmath.fsum((mpmath.mpf(x) - mx) ** 2 for x in xs)
        syy = mpmath.fsum((mpmath.mpf(y) - my) ** 2 for y in ys)
        want = float(sxy / mpmath.sqrt(sxx * syy))
    assert pearson(xs, ys) == pytest.approx(want, abs=1e-12)


points = st.lists(
    st.tuples(st.floats(-1, 1, allow_nan=False), st.floats(0, 1, allow_nan=False)), min_size=3, max_size=60
)


@settings(max_examples=200, deadline=None)
@given(points)
def test_residuals_orthogonal_and_r2_is_rho_squared(pts):
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.ptp(x) < 1e-3 or np.ptp(y) < 1e-3:
        return
    model = fit_linear(pts)
    resid = y - model.predict(x)
    assert abs(np.dot(resid, x)) <= 1e-9 * max(1.0, float(np.dot(x, x)))
    assert abs(resid.sum()) <= 1e-9 * len(pts)
    assert model.r_squared == pytest.approx(model.pearson**2, abs=1e-9)
    assert r_squared(model, pts) == pytest.approx(model.r_squared, abs=1e-12)


def test_infer_scalar():
    model = RegressionModel(SLOPE, INTERCEPT, 0.92, 0.85, 100)
    assert infer_map(model, 0.5) == pytest.approx(0.615, abs=1e-12)
    assert infer_map(model, 0.5, scale=100) == pytest.approx(61.5, abs=1e-10)
    assert infer_map(model, 0.0) == pytest.approx(INTERCEPT)


def test_infer_summary_commutes_with_line():
    model = RegressionModel(SLOPE, INTERCEPT, 0.92, 0.85, 100)
    alpha = summarize(np.random.default_rng(2).uniform(0.6, 0.9, 300), fraction=0.1, seed=2)
    out = infer_map(model, alpha)
    assert out.mean == pytest.approx(SLOPE * alpha.mean + INTERCEPT, abs=1e-12)
    assert out.std == pytest.approx(SLOPE * alpha.std, abs=1e-12)
    assert len(out.values) == len(alpha.values)
    assert out.metadata["inferred_from"] == "alpha"


def test_model_round_trip():
    m = fit_linear([(0.1, 0.3), (0.5, 0.6), (0.9, 0.95)], pool=["x"])
    assert RegressionModel.from_dict(json.loads(json.dumps(m.to_dict()))) == m
