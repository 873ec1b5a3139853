import numpy as np
import pytest

from misscompat.bootstrap import (
    BOOTSTRAP_ESTIMANDS,
    BootstrapPlan,
    bootstrap_run,
    check_dataset,
    load_plan_data,
    parse_plan,
    run_replicate,
    summarize,
)
from misscompat.compat import matched_handling
from misscompat.cpm import admitted_handlings
from misscompat.datagen import generate_registry_standin
from misscompat.exceptions import ArgumentError, SchemaError
from misscompat.tabular import save_csv

PREDS = ("C1", "C2", "C3", "C4", "B1", "B2")


@pytest.fixture(scope="module")
def standin():
    return generate_registry_standin(n=700, rng=np.random.default_rng(0), prevalence=0.15)


def _plan(**kw):
    base = dict(b=2, predictors=PREDS, outcome="Y", dev_methods=("cca", "mean_mode", "psm"))
    base.update(kw)
    return BootstrapPlan(**base)


def test_plan_validation():
    with pytest.raises(ArgumentError, match="b must be >= 1"):
        _plan(b=0)
    with pytest.raises(ArgumentError, match="E_all"):
        _plan(estimands=("E_all",))
    with pytest.raises(ArgumentError, match="unknown development methods"):
        _plan(dev_methods=("knn",))
    with pytest.raises(ArgumentError):
        _plan(predictors=())
    assert _plan().estimands == BOOTSTRAP_ESTIMANDS


def test_parse_plan():
    plan = parse_plan("b = 10\noutcome = Y\npredictors = C1, C2, B1:binary\nestimands = E_MI\nseed = 7\n")
    assert plan.b == 10 and plan.root_seed == 7
    assert plan.predictors == (("C1", None), ("C2", None), ("B1", "binary"))
    assert plan.estimands == ("E_MI",)
    assert parse_plan("b=1\noutcome=Y\npredictors=A\nseed=7", root_seed=3).root_seed == 3
    with pytest.raises(ArgumentError, match="valid keys"):
        parse_plan("b=1\noutcome=Y\npredictors=A\nreplicates=4")
    with pytest.raises(ArgumentError, match="outcome"):
        parse_plan("b=1\npredictors=A")


def test_missing_plan_column_is_schema_error(standin):
    with pytest.raises(SchemaError, match="C9"):
        check_dataset(standin, _plan(predictors=("C1", "C9")))


def test_scores_on_original_rows(standin):
    plan = _plan(b=1)
    cells = run_replicate(standin, plan, 0)
    assert all(c.ok for c in cells)
    for c in cells:
        if c.handling.method not in ("cca", "psm"):
            assert c.n_rows == standin.n_rows
    assert all(c.handling.method != "fully_observed" for c in cells)
    expected = sum(len(admitted_handlings(m)) - 1 for m in plan.dev_methods)
    assert len(cells) == expected


def test_matched_cells_zero_and_identity_replicate(standin):
    plan = _plan(b=1, resample=False)
    res = bootstrap_run(standin, plan)
    for est, rows in res.bias.items():
        for r in rows:
            if r.handling == matched_handling(est, r.dev_method, admitted_handlings(r.dev_method)):
                assert r.mean_bias == 0.0


def test_complete_data_gives_zero_bias():
    ds = generate_registry_standin(n=600, rng=np.random.default_rng(1), prevalence=0.2, missing=0.0)
    res = bootstrap_run(ds, _plan(b=2, dev_methods=("cca", "regression", "mi_no_y", "psm")))
    for rows in res.bias.values():
        for r in rows:
            assert abs(r.mean_bias) < 1e-8


def test_summarize_outputs_and_determinism(tmp_path, standin):
    plan = _plan(b=2)
    a = bootstrap_run(standin, plan)
    b = bootstrap_run(standin, plan)
    summarize(a, tmp_path / "a")
    summarize(b, tmp_path / "b")
    for est in plan.estimands:
        assert (tmp_path / "a" / f"heatmap_{est}.svg").exists()
        assert (tmp_path / "a" / f"bias_{est}.csv").read_bytes() == (tmp_path / "b" / f"bias_{est}.csv").read_bytes()
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    assert len(list((tmp_path / "a").glob("bias_*.csv"))) == 4


def test_replicates_differ(standin):
    plan = _plan(b=2, dev_methods=("mean_mode",))
    res = bootstrap_run(standin, plan)
    by_it = {}
    for c in res.cells:
        by_it.setdefault(c.iteration, []).append(c.metrics["auc"])
    assert by_it[0] != by_it[1]


def test_single_class_replicate_fails_cleanly(standin):
    vals = standin.values.copy()
    vals[:, -1] = 0.0
    ds = standin.replace(values=vals)
    res = bootstrap_run(ds, _plan(b=2, dev_methods=("cca",)))
    assert res.failed_replicates == [0, 1]
    assert all("DegenerateOutcomeError" in c.status for c in res.cells)
    assert all(r.n_ok == 0 for rows in res.bias.values() for r in rows)


def test_load_plan_data_kinds(tmp_path, standin):
    save_csv(standin, tmp_path / "d.csv")
    plan = _plan()
    ds = load_plan_data(tmp_path / "d.csv", plan)
    assert ds.names == (*PREDS, "Y")
    kinds = dict(zip(ds.names, (c.kind for c in ds.columns)))
    assert kinds["B1"] == "binary" and kinds["C1"] == "continuous"
    np.testing.assert_array_equal(ds.mask, standin.select(list(ds.names)).mask)
