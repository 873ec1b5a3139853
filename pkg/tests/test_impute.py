import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from misscompat.datagen import ScenarioConfig, generate_cohort, generate_registry_standin
from misscompat.exceptions import ContractError, DecodeError
from misscompat.impute import Imputer, apply_package, decode_package, encode_package, fit_package
from misscompat.tabular import BINARY, OUTCOME, ColumnSpec, Dataset, from_arrays


def _cohort(n=5000, rho=0.0, missing=0.5, kind="continuous", seed=0, beta=(0, 0, 0)):
    cfg = ScenarioConfig(x1_kind=kind, rho=rho, n_dev=n, target_missing=missing, beta_dev=beta)
    return generate_cohort(cfg, "development", np.random.default_rng(seed))


def _model_data(coh):
    return coh.masked_data.select(["X1", "X2", "Y"])


def _two_incomplete(n=800, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.multivariate_normal([0, 0, 0], [[1, .5, .3], [.5, 1, .2], [.3, .2, 1]], n)
    b = (z[:, 2] + rng.normal(size=n) > 0).astype(float)
    y = (rng.random(n) < 0.3).astype(float)
    vals = np.column_stack([z[:, 0], z[:, 1], b, y])
    vals[rng.random(n) < 0.3, 0] = np.nan
    vals[rng.random(n) < 0.2, 2] = np.nan
    specs = (ColumnSpec("A"), ColumnSpec("B"), ColumnSpec("C", BINARY), ColumnSpec("Y", BINARY, OUTCOME))
    return from_arrays(specs, vals)


STRATS = [("mean_mode", False), ("regression", False), ("multiple", False), ("multiple", True)]


@pytest.mark.parametrize("strategy,with_y", STRATS)
def test_identity_on_complete_data(strategy, with_y):
    full = _cohort(n=500, missing=0.0).full_data.select(["X1", "X2", "Y"])
    pkg = fit_package(strategy, full, with_y, np.random.default_rng(0))
    out = apply_package(pkg, full, np.random.default_rng(1))
    for d in out.datasets:
        np.testing.assert_array_equal(d.values, full.values)


@pytest.mark.parametrize("strategy,with_y", STRATS)
def test_observed_cells_never_altered(strategy, with_y):
    ds = _two_incomplete()
    out = apply_package(fit_package(strategy, ds, with_y, np.random.default_rng(0)), ds, np.random.default_rng(1))
    for d in out.datasets:
        np.testing.assert_array_equal(d.values[ds.mask], ds.values[ds.mask])
        assert d.predictor_mask().all()
        assert d.n_rows == ds.n_rows


def test_mean_mode_fills_and_idempotent():
    ds = _two_incomplete()
    pkg = Imputer("mean_mode").fit(ds)
    once = pkg.apply(ds).datasets[0]
    a_obs = ds.values[ds.observed("A"), 0]
    assert np.all(once.values[~ds.observed("A"), 0] == a_obs.mean())
    c_obs = ds.values[ds.observed("C"), 2]
    mode = 1.0 if c_obs.mean() > 0.5 else 0.0
    assert np.all(once.values[~ds.observed("C"), 2] == mode)
    twice = pkg.apply(once).datasets[0]
    np.testing.assert_array_equal(twice.values, once.values)


def test_cca_package():
    ds = _two_incomplete()
    out = Imputer("cca").fit(ds).apply(ds)
    keep = ds.predictor_mask().all(axis=1)
    np.testing.assert_array_equal(out.rows, np.flatnonzero(keep))
    assert out.datasets[0].n_rows == keep.sum()


def test_regression_slope_matches_conditional_normal():
    coh = _cohort(n=20_000, rho=0.75, missing=0.5, seed=3)
    pkg = Imputer("regression").fit(_model_data(coh))
    fit = pkg.models_["X1"].fit
    se = np.sqrt(fit.coefficient_covariance[1, 1])
    assert abs(fit.coefficients[1] - 0.75) < 4 * se
    assert pkg.models_["X1"].regressors == ("X2",)


def test_regression_never_uses_outcome():
    ds = _two_incomplete()
    pkg = Imputer("regression").fit(ds)
    for model in pkg.models_.values():
        assert "Y" not in model.regressors
    with pytest.raises(ValueError):
        Imputer("regression", include_outcome=True).fit(ds)


def test_regression_deterministic_across_streams():
    ds = _two_incomplete()
    pkg = Imputer("regression").fit(ds)
    a = pkg.apply(ds, rng=np.random.default_rng(1)).datasets[0].values
    b = pkg.apply(ds, rng=np.random.default_rng(2)).datasets[0].values
    np.testing.assert_array_equal(a, b)


def test_regression_binary_fill_is_probability():
    ds = _two_incomplete()
    out = Imputer("regression").fit(ds).apply(ds).datasets[0]
    filled = out.values[~ds.observed("C"), 2]
    assert ((filled > 0) & (filled < 1)).all()


def test_multiple_declares_m_and_varies():
    coh = _cohort(n=50_000, missing=0.5, seed=4)
    ds = _model_data(coh)
    pkg = fit_package("multiple", ds, rng=np.random.default_rng(0), m=5)
    assert pkg.m == 5 and pkg.to_dict()["options"]["m"] == 5
    out = pkg.apply(ds, rng=np.random.default_rng(1))
    assert out.m == 5
    miss = ~ds.observed("X1")
    stack = np.stack([d.values[miss, 0] for d in out.datasets])
    assert (stack.var(axis=0) > 0).all()


def test_multiple_with_outcome_records_and_requires_it():
    ds = _two_incomplete()
    pkg = Imputer("multiple", include_outcome=True, m=2).fit(ds, rng=np.random.default_rng(0))
    assert pkg.to_dict()["options"]["include_outcome"] is True
    assert "Y" in pkg.models_["A"].regressors
    no_y = ds.select(["A", "B", "C"])
    with pytest.raises(ContractError):
        pkg.apply(no_y, rng=np.random.default_rng(0))
    masked_y = Dataset(ds.columns, ds.values, np.column_stack([ds.mask[:, :3], np.zeros(ds.n_rows, bool)]))
    with pytest.raises(ContractError):
        Imputer("multiple", include_outcome=True).fit(masked_y, rng=np.random.default_rng(0))


def test_multiple_without_outcome_ignores_it():
    pkg = Imputer("multiple", m=2).fit(_two_incomplete(), rng=np.random.default_rng(0))
    assert all("Y" not in m.regressors for m in pkg.models_.values())


def test_deterministic_limit_equals_regression_fill():
    coh = _cohort(n=3000, rho=0.5, missing=0.3, seed=6)
    ds = _model_data(coh)
    reg = Imputer("regression").fit(ds).apply(ds).datasets[0].values
    mi = Imputer("multiple", m=1, stochastic=False).fit(ds, rng=np.random.default_rng(0))
    out = mi.apply(ds, rng=np.random.default_rng(1)).datasets[0].values
    np.testing.assert_allclose(out, reg, rtol=0, atol=1e-12)


def test_schema_mismatch_is_contract_error():
    ds = _two_incomplete()
    pkg = Imputer("mean_mode").fit(ds)
    with pytest.raises(ContractError):
        pkg.apply(ds.select(["B", "A", "C", "Y"]))


def test_transport_to_other_data():
    dev = _model_data(_cohort(n=2000, seed=1))
    val = _model_data(_cohort(n=1500, seed=2))
    pkg = Imputer("regression").fit(dev)
    out = pkg.apply(val).datasets[0]
    miss = ~val.observed("X1")
    coef = pkg.models_["X1"].fit.coefficients
    np.testing.assert_allclose(out.values[miss, 0], coef[0] + coef[1] * val.values[miss, 1])


def test_registry_standin_chained_equations_run():
    ds = generate_registry_standin(n=1500, rng=np.random.default_rng(0))
    out = Imputer("multiple", m=2, n_cycles=3).fit(ds, rng=np.random.default_rng(0)).apply(
        ds, rng=np.random.default_rng(1))
    assert all(d.predictor_mask().all() for d in out.datasets)


def test_regression_round_trip_coefficients():
    ds = _two_incomplete()
    pkg = Imputer("regression").fit(ds)
    back = decode_package(encode_package(pkg))
    for name, model in pkg.models_.items():
        np.testing.assert_array_equal(back.models_[name].fit.coefficients, model.fit.coefficients)


def test_multiple_round_trip_same_imputations():
    ds = _two_incomplete()
    pkg = Imputer("multiple", m=5).fit(ds, rng=np.random.default_rng(0))
    back = decode_package(encode_package(pkg))
    a = pkg.apply(ds, rng=np.random.default_rng(9))
    b = back.apply(ds, rng=np.random.default_rng(9))
    for x, y in zip(a.datasets, b.datasets):
        np.testing.assert_array_equal(x.values, y.values)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 400))
def test_truncated_bytes_fail_to_decode(cut):
    blob = encode_package(Imputer("regression").fit(_two_incomplete(200)))
    cut = min(cut, len(blob) - 1)
    with pytest.raises(DecodeError):
        decode_package(blob[:cut])


def test_version_mismatch_reports_versions():
    import json
    d = Imputer("mean_mode").fit(_two_incomplete()).to_dict()
    d["format_version"] = 99
    with pytest.raises(DecodeError, match="expected 1, found 99"):
        decode_package(json.dumps(d).encode())


def test_sklearn_transformer_api():
    from sklearn.base import clone
    X = np.array([[1.0, 2.0], [np.nan, 4.0], [3.0, np.nan], [5.0, 6.0]])
    imp = Imputer("mean_mode")
    assert clone(imp).get_params()["strategy"] == "mean_mode"
    Xt = imp.fit_transform(X)
    np.testing.assert_allclose(Xt[1, 0], 3.0)
    np.testing.assert_allclose(Xt[2, 1], 4.0)
    with pytest.raises(ValueError):
        Imputer("knn").fit(X)
