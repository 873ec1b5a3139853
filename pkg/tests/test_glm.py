import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from misscompat.exceptions import DegenerateOutcomeError, NumericError, SingularDesignError
from misscompat.glm import (
    LinearFit,
    LogisticFit,
    fit_linear,
    fit_logistic,
    linear_predictor,
    posterior_draw,
    predict_linear,
    predict_probability,
)
from oracles import log_odds_ratio, logistic_mle, ols, two_by_two


def test_linear_exact_fit():
    x = np.arange(10.0)
    fit = fit_linear(x, 2 + 3 * x)
    np.testing.assert_allclose(fit.coefficients, [2, 3], atol=1e-12)
    assert fit.residual_variance < 1e-20
    assert fit.dof == 8 and fit.n == 10


def test_linear_flat_response():
    x = np.random.default_rng(0).normal(size=30)
    assert abs(fit_linear(x, np.full(30, 4.2)).coefficients[1]) < 1e-12


def test_linear_matches_lstsq():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 3))
    y = X @ [1, -2, 0.5] + rng.normal(size=100)
    np.testing.assert_allclose(fit_linear(X, y).coefficients, ols(X, y), rtol=1e-10)


def test_linear_sampling_distribution():
    rng = np.random.default_rng(2)
    z = []
    for _ in range(500):
        x = rng.normal(size=200)
        fit = fit_linear(x, 1 + 0.5 * x + rng.normal(size=200))
        se = np.sqrt(np.diag(fit.coefficient_covariance))
        z.append((fit.coefficients - [1, 0.5]) / se)
    z = np.array(z)
    assert (np.abs(z) < 4).all()
    assert abs(z.mean()) < 4 / np.sqrt(500) * 1.1


def test_linear_consistency_shrinks():
    rng = np.random.default_rng(3)
    errs = []
    for n in (100, 1000, 10_000):
        e = []
        for _ in range(40):
            x = rng.normal(size=n)
            e.append(abs(fit_linear(x, 1 + 0.5 * x + rng.normal(size=n)).coefficients[1] - 0.5))
        errs.append(np.mean(e))
    assert errs[0] > errs[1] > errs[2]
    # root-n consistency: log error falls by one half per decade of n
    slope = np.polyfit(np.log10([100, 1000, 10_000]), np.log10(errs), 1)[0]
    assert -0.65 < slope < -0.35


def test_linear_singular_names_columns():
    x = np.random.default_rng(0).normal(size=(20, 1))
    X = np.column_stack([x, 2 * x])
    with pytest.raises(SingularDesignError) as info:
        fit_linear(X, x[:, 0], names=["a", "b"])
    assert set(info.value.dependent_columns) & {"a", "b"}


def test_predict_linear_arity():
    fit = fit_linear(np.arange(5.0), np.arange(5.0))
    np.testing.assert_allclose(predict_linear(fit, [1.0, 2.0]), [1, 2])
    with pytest.raises(ValueError):
        predict_linear(fit, np.ones((2, 2)))


def test_two_by_two_log_odds_ratio():
    x, y = two_by_two(30, 12, 9, 40)
    fit = fit_logistic(x, y)
    assert abs(fit.coefficients[1] - log_odds_ratio(30, 12, 9, 40)) < 1e-8
    assert fit.converged and fit.ridge_used == 0


def test_balanced_intercept_only():
    fit = fit_logistic(None, np.r_[np.ones(50), np.zeros(50)])
    assert abs(fit.coefficients[0]) < 1e-12


def test_logistic_matches_independent_optimizer():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(500, 2))
    y = (rng.random(500) < expit(-0.5 + X @ [1.0, -0.7])).astype(float)
    fit = fit_logistic(X, y)
    np.testing.assert_allclose(fit.coefficients, logistic_mle(X, y), atol=1e-6)


def test_logistic_offset_intercept_only():
    rng = np.random.default_rng(5)
    off = rng.normal(size=400)
    y = (rng.random(400) < expit(0.3 + off)).astype(float)
    fit = fit_logistic(None, y, offset=off, freeze_slope_to_offset=True)
    assert fit.coefficients.shape == (1,)
    np.testing.assert_allclose(fit.coefficients, logistic_mle(np.empty((400, 0)), y, off), atol=1e-6)


def test_separation_triggers_ridge():
    x = np.r_[np.linspace(-2, -0.1, 10), np.linspace(0.1, 2, 10)]
    y = (x > 0).astype(float)
    fit = fit_logistic(x, y)
    assert fit.ridge_used > 0
    assert np.isfinite(fit.coefficients).all()
    assert fit.converged == (fit.gradient_norm <= 1e-8)


def test_logistic_errors():
    with pytest.raises(DegenerateOutcomeError):
        fit_logistic(np.ones(5), np.zeros(5))
    with pytest.raises(ValueError):
        fit_logistic(np.empty((0, 1)), np.empty(0))
    with pytest.raises(ValueError):
        fit_logistic(np.ones(3), [0, 2, 1])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(30, 300))
def test_converged_flag_means_small_gradient(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = (rng.random(n) < expit(X @ [1.5, -1.0])).astype(float)
    if y.min() == y.max():
        return
    fit = fit_logistic(X, y)
    D = np.column_stack([np.ones(n), X])
    pen = np.r_[0.0, np.full(2, fit.ridge_used)]
    grad = D.T @ (y - expit(D @ fit.coefficients)) - pen * fit.coefficients
    if fit.converged:
        assert np.max(np.abs(grad)) <= 1e-8


def test_self_refit_identity():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(1000, 3))
    y = (rng.random(1000) < expit(X @ [0.5, 1, -1])).astype(float)
    lp = linear_predictor(fit_logistic(X, y).coefficients, X)
    refit = fit_logistic(lp, y)
    assert abs(refit.coefficients[0]) < 1e-6 and abs(refit.coefficients[1] - 1) < 1e-6


def test_predict_probability_cases():
    X = np.random.default_rng(0).normal(size=(5, 2))
    np.testing.assert_array_equal(predict_probability(np.zeros(3), X), 0.5)
    np.testing.assert_allclose(predict_probability([np.log(0.25), 0, 0], X), 0.2)
    p = predict_probability([1000.0, 0, 0], X)
    assert np.isfinite(p).all() and (p < 1).all()
    np.testing.assert_allclose(p, expit(36.0))
    with pytest.raises(ValueError):
        predict_probability(np.zeros(2), X)


def test_predict_probability_monotone():
    x = np.linspace(-3, 3, 50)[:, None]
    assert (np.diff(predict_probability([0.1, 0.8], x)) > 0).all()


def test_posterior_draw_degenerate_covariance():
    fit = LogisticFit(np.array([0.2, -0.4]), np.zeros((2, 2)), True, 0.0, 100)
    np.testing.assert_allclose(posterior_draw(fit, np.random.default_rng(0)).coefficients, [0.2, -0.4])


def test_posterior_draw_linear_mean():
    rng = np.random.default_rng(7)
    x = rng.normal(size=50)
    fit = fit_linear(x, 1 + x + rng.normal(size=50))
    draws = np.array([posterior_draw(fit, rng).coefficients for _ in range(1000)])
    se = np.sqrt(np.diag(fit.coefficient_covariance))
    # the drawn variance scales the covariance, so use a slightly generous SE
    assert (np.abs(draws.mean(axis=0) - fit.coefficients) < 4 * 1.1 * se / np.sqrt(1000)).all()
    sig = [posterior_draw(fit, rng).residual_variance for _ in range(2000)]
    assert abs(np.mean(sig) / fit.residual_variance - fit.dof / (fit.dof - 2)) < 0.05


def test_posterior_draws_vary():
    fit = fit_linear(np.arange(10.0), np.arange(10.0) + np.random.default_rng(0).normal(size=10))
    a = posterior_draw(fit, np.random.default_rng(1)).coefficients
    b = posterior_draw(fit, np.random.default_rng(2)).coefficients
    assert not np.array_equal(a, b)


def test_posterior_draw_rejects_non_psd():
    fit = LogisticFit(np.zeros(2), np.array([[1.0, 0], [0, -1.0]]), True, 0.0, 10)
    with pytest.raises(NumericError, match="ridge"):
        posterior_draw(fit, np.random.default_rng(0))


def test_fit_serialization_round_trip():
    rng = np.random.default_rng(8)
    x = rng.normal(size=40)
    lin = fit_linear(x, x + rng.normal(size=40))
    back = LinearFit.from_dict(lin.to_dict())
    np.testing.assert_array_equal(back.coefficients, lin.coefficients)
    y = (rng.random(40) < 0.5).astype(float)
    log = fit_logistic(x, y)
    back = LogisticFit.from_dict(log.to_dict())
    np.testing.assert_array_equal(back.coefficient_covariance, log.coefficient_covariance)
