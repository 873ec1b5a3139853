import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import expit

from misscompat.exceptions import UndefinedMetricError
from misscompat.glm import fit_logistic, linear_predictor
from misscompat.metrics import PerfReport, auc, brier, calibration, evaluate, logit
from oracles import brute_force_auc, logistic_mle


def test_auc_trivial_cases():
    y = np.array([0, 1, 0, 1, 1])
    assert auc(y.astype(float), y) == 1.0
    assert auc(np.full(5, 0.3), y) == 0.5
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 50).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=st.sampled_from([0.1, 0.2, 0.25, 0.5, 0.7, 0.9]) | st.floats(0, 1)),
    arrays(np.int8, n, elements=st.integers(0, 1)))))
def test_auc_matches_brute_force(data):
    probs, y = data
    if y.min() == y.max():
        return
    assert abs(auc(probs, y) - brute_force_auc(probs, y)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 30, elements=st.floats(0.01, 0.99)), arrays(np.int8, 30, elements=st.integers(0, 1)))
def test_auc_invariant_to_monotone_transform(probs, y):
    if y.min() == y.max():
        return
    assert auc(probs, y) == auc(np.log(probs) ** 3, y)


def test_brier_cases():
    y = np.array([0, 1, 1, 0, 1.0])
    assert brier(y, y) == 0
    assert brier(np.full(5, 0.5), y) == 0.25
    p = y.mean()
    assert abs(brier(np.full(5, p), y) - p * (1 - p)) < 1e-15
    with pytest.raises(UndefinedMetricError):
        brier([], [])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 20, elements=st.floats(0, 1)), arrays(np.int8, 20, elements=st.integers(0, 1)))
def test_metric_ranges(probs, y):
    assert 0 <= brier(probs, y) <= 1
    if y.min() != y.max():
        assert 0 <= auc(probs, y) <= 1


def _well_calibrated(n, rng):
    lp = rng.normal(-1.0, 1.0, n)
    y = (rng.random(n) < expit(lp)).astype(float)
    return lp, y


def test_calibration_identity_on_training_predictions():
    rng = np.random.default_rng(0)
    for _ in range(20):
        X = rng.normal(size=(300, 2))
        y = (rng.random(300) < expit(X @ [1, -0.5])).astype(float)
        probs = expit(linear_predictor(fit_logistic(X, y).coefficients, X))
        ci, cs = calibration(probs, y)
        assert abs(ci) < 1e-6 and abs(cs - 1) < 1e-6


def test_calibration_intercept_offset_shift():
    rng = np.random.default_rng(1)
    lp, y = _well_calibrated(50_000, rng)
    ci, _ = calibration(expit(lp - np.log(2)), y)
    # the halved-odds model should have intercept ln 2 up to sampling error
    se = 1 / np.sqrt(50_000 * 0.2 * 0.8)
    assert abs(ci - np.log(2)) < 4 * se


def test_calibration_slope_inverse_scaling():
    rng = np.random.default_rng(2)
    lp, y = _well_calibrated(50_000, rng)
    _, cs = calibration(expit(2 * lp), y)
    assert abs(cs - 0.5) < 0.03


def test_calibration_matches_independent_optimizer():
    rng = np.random.default_rng(3)
    lp, y = _well_calibrated(2000, rng)
    probs = expit(0.8 * lp + 0.3)
    ci, cs = calibration(probs, y)
    L = logit(probs)
    assert abs(cs - logistic_mle(L, y)[1]) < 1e-6
    assert abs(ci - logistic_mle(np.empty((2000, 0)), y, L)[0]) < 1e-6


def test_calibration_single_class():
    with pytest.raises(UndefinedMetricError):
        calibration([0.2, 0.3], [0, 0])


def test_logit_clamped_finite():
    assert np.isfinite(logit([0.0, 1.0])).all()


def test_evaluate_single_column_equals_metric_calls():
    rng = np.random.default_rng(4)
    lp, y = _well_calibrated(500, rng)
    p = expit(lp)
    r = evaluate(p, y)
    ci, cs = calibration(p, y)
    assert r.auc == auc(p, y) and r.brier == brier(p, y)
    assert abs(r.cal_intercept - ci) < 1e-9 and abs(r.cal_slope - cs) < 1e-9
    assert r.k_imputations == 1 and r.n_rows == 500 and r.n_events == int(y.sum())


def test_evaluate_identical_columns_same_as_one():
    rng = np.random.default_rng(5)
    lp, y = _well_calibrated(300, rng)
    p = expit(lp)
    one, five = evaluate(p, y), evaluate(np.column_stack([p] * 5), y)
    assert five.k_imputations == 5
    for m in ("auc", "brier", "cal_intercept", "cal_slope"):
        assert abs(one.metric(m) - five.metric(m)) < 1e-12


def test_evaluate_averages_columns():
    rng = np.random.default_rng(6)
    lp, y = _well_calibrated(400, rng)
    P = np.column_stack([expit(lp + rng.normal(0, 0.3, 400)) for _ in range(3)])
    r = evaluate(P, y)
    assert abs(r.auc - np.mean([auc(P[:, j], y) for j in range(3)])) < 1e-12
    assert abs(r.cal_slope - np.mean([calibration(P[:, j], y)[1] for j in range(3)])) < 1e-9


def test_evaluate_stack_pooling():
    rng = np.random.default_rng(7)
    lp, y = _well_calibrated(200, rng)
    P = np.column_stack([expit(lp), expit(lp + 0.5)])
    r = evaluate(P, y, pool="stack")
    assert abs(r.brier - brier(P.T.ravel(), np.tile(y, 2))) < 1e-15
    with pytest.raises(ValueError):
        evaluate(P, y, pool="median")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.permutations(range(4)))
def test_evaluate_column_permutation_invariant(seed, perm):
    rng = np.random.default_rng(seed)
    lp, y = _well_calibrated(150, rng)
    if y.min() == y.max():
        return
    P = np.column_stack([expit(lp + rng.normal(0, 0.5, 150)) for _ in range(4)])
    assert evaluate(P, y) == evaluate(P[:, list(perm)], y)


def test_perf_report_metric_lookup():
    r = PerfReport(0.7, 0.1, 0.0, 1.0, 10, 3)
    assert r.metric("auc") == 0.7
    with pytest.raises(ValueError):
        r.metric("f1")
