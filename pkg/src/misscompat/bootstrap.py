"""Bootstrap audit of missing-data handling on an observed dataset.

Each replicate resamples the rows with replacement, develops one model per
development method on the replicate, and scores every model on the original
data under each admitted handling. Bias is computed per estimand exactly as
in the simulation, with replicates playing the role of iterations.
"""

from __future__ import annotations

import configparser
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compat import E_ALL, ESTIMANDS, CellResult, compute_bias, develop_all, validate_bundles
from .cpm import DEV_METHODS, admitted_handlings
from .exceptions import ArgumentError, DegenerateOutcomeError, ParseError, SchemaError
from .report import aggregate_and_emit, render_panel
from .rng import SeedSpec, derive_stream
from .tabular import BINARY, CONTINUOUS, OUTCOME, PREDICTOR, ColumnSpec, Dataset, infer_specs, load_csv

BOOTSTRAP_ESTIMANDS = tuple(e for e in ESTIMANDS if e != E_ALL)
DEFAULT_DEV_METHODS = tuple(m for m in DEV_METHODS if m != "fully_observed")
SCENARIO_ID = "bootstrap"


@dataclass(frozen=True)
class BootstrapPlan:
    """What to resample, which model to fit and which estimands to report.

    ``predictors`` holds ``(name, kind)`` pairs; a kind of ``None`` is
    inferred from the data.
    """

    b: int
    predictors: tuple
    outcome: str
    dev_methods: tuple = DEFAULT_DEV_METHODS
    estimands: tuple = BOOTSTRAP_ESTIMANDS
    root_seed: int = 0
    resample: bool = True  # False reuses the original rows (test hook)

    def __post_init__(self):
        if int(self.b) < 1:
            raise ArgumentError(f"bootstrap count b must be >= 1, got {self.b}")
        object.__setattr__(self, "b", int(self.b))
        preds = tuple((p, None) if isinstance(p, str) else (p[0], p[1]) for p in self.predictors)
        if not preds:
            raise ArgumentError("plan needs at least one predictor")
        for name, kind in preds:
            if kind not in (None, CONTINUOUS, BINARY):
                raise ArgumentError(f"predictor {name!r}: kind must be continuous or binary, got {kind!r}")
        object.__setattr__(self, "predictors", preds)
        bad = [m for m in self.dev_methods if m not in DEV_METHODS]
        if bad:
            raise ArgumentError(f"unknown development methods {bad}; valid: {list(DEV_METHODS)}")
        if E_ALL in self.estimands:
            raise ArgumentError("E_all needs pre-missingness data and is not available in a bootstrap audit")
        bad = [e for e in self.estimands if e not in BOOTSTRAP_ESTIMANDS]
        if bad:
            raise ArgumentError(f"unknown estimands {bad}; valid: {list(BOOTSTRAP_ESTIMANDS)}")
        object.__setattr__(self, "dev_methods", tuple(self.dev_methods))
        object.__setattr__(self, "estimands", tuple(self.estimands))

    @property
    def predictor_names(self) -> tuple:
        return tuple(n for n, _ in self.predictors)

    def as_dict(self) -> dict:
        return {
            "b": self.b,
            "predictors": [f"{n}:{k}" if k else n for n, k in self.predictors],
            "outcome": self.outcome,
            "dev_methods": list(self.dev_methods),
            "estimands": list(self.estimands),
            "root_seed": self.root_seed,
            "resample": self.resample,
        }


_PLAN_KEYS = ("b", "outcome", "predictors", "dev_methods", "estimands", "seed")


def _split(text):
    return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]


def parse_plan(text: str, root_seed: int | None = None) -> BootstrapPlan:
    """Parse a plan from ``key = value`` lines (an optional ``[plan]`` header).

    ``predictors`` is a comma- or newline-separated list; append ``:binary``
    or ``:continuous`` to fix a predictor's kind.
    """
    cp = configparser.ConfigParser(interpolation=None)
    body = text if text.lstrip().startswith("[") else "[plan]\n" + text
    try:
        cp.read_string(body)
    except configparser.Error as exc:
        raise ParseError(f"plan file: {exc}") from exc
    if not cp.has_section("plan"):
        raise ParseError("plan file needs a [plan] section")
    sec = cp["plan"]
    unknown = sorted(set(sec) - set(_PLAN_KEYS))
    if unknown:
        raise ArgumentError(f"unknown plan keys {unknown}; valid keys are {list(_PLAN_KEYS)}")
    for key in ("b", "outcome", "predictors"):
        if key not in sec:
            raise ArgumentError(f"plan is missing required key {key!r}")
    try:
        b = int(sec["b"])
    except ValueError:
        raise ParseError(f"plan key b: expected an integer, got {sec['b']!r}") from None
    preds = []
    for item in _split(sec["predictors"]):
        name, _, kind = item.partition(":")
        preds.append((name.strip(), kind.strip().lower() or None))
    seed = root_seed if root_seed is not None else int(sec.get("seed", "0"))
    return BootstrapPlan(
        b=b,
        predictors=tuple(preds),
        outcome=sec["outcome"].strip(),
        dev_methods=tuple(_split(sec["dev_methods"])) if "dev_methods" in sec else DEFAULT_DEV_METHODS,
        estimands=tuple(_split(sec["estimands"])) if "estimands" in sec else BOOTSTRAP_ESTIMANDS,
        root_seed=seed,
    )


def load_plan(path, root_seed: int | None = None) -> BootstrapPlan:
    return parse_plan(Path(path).read_text(encoding="utf-8"), root_seed)


def load_plan_data(path, plan: BootstrapPlan) -> Dataset:
    """Read the plan's outcome and predictors from a CSV; other columns are ignored."""
    specs = infer_specs(path, outcome=plan.outcome, predictors=list(plan.predictor_names))
    by_name = {s.name: s for s in specs}
    cols = [ColumnSpec(n, k or by_name[n].kind, PREDICTOR) for n, k in plan.predictors]
    cols.append(ColumnSpec(plan.outcome, BINARY, OUTCOME))
    full = load_csv(path, list(specs))
    return full.select([c.name for c in cols]).replace(columns=tuple(cols))


def check_dataset(ds: Dataset, plan: BootstrapPlan) -> Dataset:
    absent = [n for n in (*plan.predictor_names, plan.outcome) if n not in ds.names]
    if absent:
        raise SchemaError(f"dataset lacks plan columns {absent}")
    ds = ds.select([*plan.predictor_names, plan.outcome])
    if not ds.observed(plan.outcome).all():
        raise SchemaError(f"outcome {plan.outcome!r} must be observed for every row")
    empty = [n for n in plan.predictor_names if not ds.observed(n).any()]
    if empty:
        raise SchemaError(f"predictors with no observed values: {empty}")
    return ds


@dataclass
class BootstrapResult:
    plan: BootstrapPlan
    cells: list = field(default_factory=list)
    bias: dict = field(default_factory=dict)
    failed_replicates: list = field(default_factory=list)

    @property
    def n_replicates(self) -> int:
        return self.plan.b


def run_replicate(ds: Dataset, plan: BootstrapPlan, r: int) -> list:
    """Develop on replicate ``r`` and score on the original rows."""
    seed = SeedSpec(plan.root_seed, (SCENARIO_ID, f"replicate-{r}"))
    n = ds.n_rows
    rows = derive_stream(seed.child("resample")).integers(0, n, n) if plan.resample else np.arange(n)
    rep = ds.subset(rows)
    y = rep.outcome()
    if y.min() == y.max():
        exc = DegenerateOutcomeError(f"replicate {r} has a single outcome class")
        return [
            CellResult(SCENARIO_ID, r, m, h, status=f"failed: {type(exc).__name__}: {exc}")
            for m in plan.dev_methods for h in admitted_handlings(m) if h.method != "fully_observed"
        ]
    bundles = develop_all(rep, seed, plan.dev_methods)
    return validate_bundles(bundles, ds, seed, full_val=None, scenario_id=SCENARIO_ID, iteration=r,
                            methods=list(plan.dev_methods))


def _task(args):
    return run_replicate(*args)


def bootstrap_run(ds: Dataset, plan: BootstrapPlan, workers: int = 1, progress=None) -> BootstrapResult:
    ds = check_dataset(ds, plan)
    tasks = [(ds, plan, r) for r in range(plan.b)]
    if workers > 1 and plan.b > 1:
        with ProcessPoolExecutor(workers) as pool:
            per_rep = list(pool.map(_task, tasks))
    else:
        per_rep = []
        for t in tasks:
            per_rep.append(_task(t))
            if progress is not None:
                progress(t[2])
    cells = [c for rep in per_rep for c in rep]
    failed = [r for r, rep in enumerate(per_rep) if rep and all(not c.ok for c in rep)]
    bias = {est: compute_bias(cells, est) for est in plan.estimands}
    return BootstrapResult(plan, cells, bias, failed)


def summarize(result: BootstrapResult, out_dir) -> dict:
    """Results and bias CSVs plus one four-metric heatmap per estimand."""
    out = Path(out_dir)
    config = {"command": "bootstrap", "plan": result.plan.as_dict(), "failed_replicates": result.failed_replicates}
    tables = aggregate_and_emit(result.cells, out, result.plan.root_seed, config,
                                estimands=result.plan.estimands, bias=result.bias)
    for est, rows in tables.items():
        if rows:
            render_panel(rows, out / f"heatmap_{est}.svg")
    return tables
