"""Missing-data handling strategies as fitted, transportable packages.

A fitted :class:`Imputer` is the "imputation package": it stores everything
needed to complete new data (summary values, per-variable regression fits)
and can be serialized to JSON and applied to another dataset unchanged.

Strategies
----------
cca
    Drop rows with any missing predictor.
mean_mode
    Fill with the observed mean (continuous) or mode (binary).
regression
    Fill with deterministic predictions from per-variable regressions on the
    other predictors (never the outcome). Binary targets are filled with the
    fitted probability.
multiple
    Chained-equations imputation producing ``m`` completed datasets from
    posterior draws of the per-variable regressions, optionally with the
    outcome as an extra regressor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import __version__
from ._validation import as_dataset, check_outcome, check_predictors
from .exceptions import ContractError, DecodeError, DegenerateOutcomeError
from .glm import LinearFit, LogisticFit, fit_linear, fit_logistic, posterior_draw, predict_probability
from .tabular import BINARY, Dataset, column_summaries

STRATEGIES = ("cca", "mean_mode", "regression", "multiple")
PACKAGE_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class VariableModel:
    """Imputation model for one predictor."""

    name: str
    kind: str
    regressors: tuple
    fit: object = None  # LinearFit | LogisticFit | None
    constant: float | None = None

    def expected(self, Xr, coefficients=None):
        if self.fit is None:
            return np.full(Xr.shape[0], self.constant)
        coef = self.fit.coefficients if coefficients is None else coefficients
        if isinstance(self.fit, LogisticFit):
            return predict_probability(coef, Xr)
        return coef[0] + Xr @ coef[1:]

    def to_dict(self):
        model = {"type": "constant", "value": self.constant} if self.fit is None else self.fit.to_dict()
        return {"name": self.name, "kind": self.kind, "regressors": list(self.regressors), "model": model}

    @classmethod
    def from_dict(cls, d):
        m = d["model"]
        if m["type"] == "constant":
            return cls(d["name"], d["kind"], tuple(d["regressors"]), None, float(m["value"]))
        fit = LinearFit.from_dict(m) if m["type"] == "linear" else LogisticFit.from_dict(m)
        return cls(d["name"], d["kind"], tuple(d["regressors"]), fit)


@dataclass(frozen=True, eq=False)
class CompletedData:
    datasets: tuple
    row_filter: np.ndarray | None
    source_mask: np.ndarray

    @property
    def m(self) -> int:
        return len(self.datasets)

    @property
    def rows(self) -> np.ndarray:
        """Positions of the retained input rows."""
        if self.row_filter is not None:
            return self.row_filter
        return np.arange(self.datasets[0].n_rows)


def _fit_variable(name, kind, regressors, Xr, target) -> VariableModel:
    if kind == BINARY:
        try:
            return VariableModel(name, kind, tuple(regressors), fit_logistic(Xr, target))
        except DegenerateOutcomeError:
            return VariableModel(name, kind, tuple(regressors), None, float(target[0]))
    return VariableModel(name, kind, tuple(regressors), fit_linear(Xr, target, names=list(regressors)))


class Imputer(TransformerMixin, BaseEstimator):
    """Fit a missing-data handling package on one dataset and apply it to others.

    Parameters
    ----------
    strategy : {"cca", "mean_mode", "regression", "multiple"}
    include_outcome : bool
        Multiple imputation only: use the outcome as a regressor. A package
        fitted this way refuses data without an observed outcome.
    m : int
        Number of completed datasets for ``multiple``.
    n_cycles : int
        Chained-equation cycles when more than one variable is incomplete.
    stochastic : bool
        ``False`` turns ``multiple`` into its deterministic limit (no
        posterior draws, no residual noise).
    random_state : int, Generator or None
        Used when no ``rng`` is passed to ``fit``/``apply``.
    """

    def __init__(self, strategy="mean_mode", include_outcome=False, m=5, n_cycles=10, stochastic=True,
                 random_state=None):
        self.strategy = strategy
        self.include_outcome = include_outcome
        self.m = m
        self.n_cycles = n_cycles
        self.stochastic = stochastic
        self.random_state = random_state

    def _rng(self, rng):
        return rng if rng is not None else np.random.default_rng(self.random_state)

    def _check_params(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.include_outcome and self.strategy != "multiple":
            raise ValueError("only multiple imputation may include the outcome")
        if self.strategy == "multiple" and int(self.m) < 1:
            raise ValueError("m must be at least 1")
        if int(self.n_cycles) < 1:
            raise ValueError("n_cycles must be at least 1")

    def fit(self, X, y=None, rng=None, provenance=None):
        self._check_params()
        ds = as_dataset(X, y)
        rng = self._rng(rng)
        self.predictors_ = ds.predictor_names
        self.kinds_ = tuple(ds.spec(n).kind for n in self.predictors_)
        self.outcome_ = None
        if self.include_outcome:
            check_outcome(ds, "multiple imputation with the outcome")
            self.outcome_ = ds.outcome_name
        self.summaries_ = {}
        self.models_ = {}
        if self.strategy != "cca":
            self.summaries_ = {k: v.value for k, v in column_summaries(ds, self.predictors_).items()}
        if self.strategy == "regression":
            self._fit_regression(ds)
        elif self.strategy == "multiple":
            self._fit_chained(ds, rng)
        self.provenance_ = {"n_rows": int(ds.n_rows), "library_version": __version__, **(provenance or {})}
        return self

    def _fit_regression(self, ds):
        X = ds.values[:, ds.predictor_index]
        rows = ds.predictor_mask().all(axis=1)
        names = self.predictors_
        for j, name in enumerate(names):
            others = [k for k in range(len(names)) if k != j]
            regs = [names[k] for k in others]
            self.models_[name] = _fit_variable(name, self.kinds_[j], regs, X[rows][:, others], X[rows, j])

    def _fit_chained(self, ds, rng):
        names = self.predictors_
        pidx = ds.predictor_index
        miss = ~ds.mask[:, pidx]
        cur = self._initial(ds.values[:, pidx], miss)
        y = ds.values[:, ds.index(self.outcome_)] if self.include_outcome else None
        incomplete = [j for j in range(len(names)) if miss[:, j].any()]
        cycles = 1 if len(incomplete) <= 1 else int(self.n_cycles)
        for _ in range(cycles):
            for j in incomplete:
                regs, Xr = self._regressors(cur, j, y)
                obs = ~miss[:, j]
                model = _fit_variable(names[j], self.kinds_[j], regs, Xr[obs], cur[obs, j])
                self.models_[names[j]] = model
                if cycles > 1:
                    draw = self._draw(model, rng)
                    cur[miss[:, j], j] = self._fill(model, Xr[miss[:, j]], draw, rng)
        for j in range(len(names)):
            if j not in incomplete:
                regs, Xr = self._regressors(cur, j, y)
                self.models_[names[j]] = _fit_variable(names[j], self.kinds_[j], regs, Xr, cur[:, j])

    def _initial(self, X, miss):
        cur = np.array(X, dtype=float, copy=True)
        for j, name in enumerate(self.predictors_):
            cur[miss[:, j], j] = self.summaries_[name]
        return cur

    def _regressors(self, cur, j, y):
        others = [k for k in range(cur.shape[1]) if k != j]
        regs = [self.predictors_[k] for k in others]
        Xr = cur[:, others]
        if y is not None:
            regs.append(self.outcome_)
            Xr = np.column_stack([Xr, y])
        return regs, Xr

    def _draw(self, model, rng):
        if model.fit is None or not self.stochastic:
            return None
        return posterior_draw(model.fit, rng)

    def _fill(self, model, Xr, draw, rng):
        if model.fit is None:
            return np.full(Xr.shape[0], model.constant)
        if draw is None:
            return model.expected(Xr)
        mean = model.expected(Xr, draw.coefficients)
        if model.kind == BINARY:
            return (rng.random(mean.shape[0]) < mean).astype(float)
        return mean + np.sqrt(draw.residual_variance) * rng.standard_normal(mean.shape[0])

    def apply(self, X, y=None, rng=None) -> CompletedData:
        """Complete ``X``; returns one dataset (``m`` for multiple imputation)."""
        check_is_fitted(self, "predictors_")
        ds = as_dataset(X, y)
        check_predictors(ds, self.predictors_, self.kinds_, f"{self.strategy} imputation package")
        source_mask = ds.mask.copy()
        pidx = ds.predictor_index
        miss = ~ds.mask[:, pidx]
        if self.strategy == "cca":
            rows = np.flatnonzero(~miss.any(axis=1))
            return CompletedData((ds.subset(rows),), rows, source_mask)
        y = None
        if self.include_outcome:
            if ds.outcome_name != self.outcome_:
                raise ContractError(
                    f"package imputes with outcome {self.outcome_!r}; data has outcome {ds.outcome_name!r}"
                )
            y = check_outcome(ds, "multiple imputation with the outcome")
        need = [j for j in range(len(self.predictors_)) if miss[:, j].any()]
        for j in need:
            if self.strategy != "mean_mode" and self.predictors_[j] not in self.models_:
                raise ContractError(f"package has no imputation model for {self.predictors_[j]!r}")
        rng = self._rng(rng)
        X0 = ds.values[:, pidx]
        if self.strategy == "multiple":
            completed = [self._complete(ds, X0, miss, need, y, rng) for _ in range(int(self.m))]
        else:
            completed = [self._complete(ds, X0, miss, need, y, None)]
        return CompletedData(tuple(completed), None, source_mask)

    def _complete(self, ds, X0, miss, need, y, rng):
        cur = self._initial(X0, miss)
        if self.strategy != "mean_mode" and need:
            models = [self.models_[self.predictors_[j]] for j in need]
            draws = [self._draw(mod, rng) if rng is not None else None for mod in models]
            cycles = 1 if len(need) == 1 else int(self.n_cycles)
            for _ in range(cycles):
                for j, model, draw in zip(need, models, draws):
                    _, Xr = self._regressors(cur, j, y)
                    rows = miss[:, j]
                    cur[rows, j] = self._fill(model, Xr[rows], draw, rng)
        values = np.array(ds.values, copy=True)
        pidx = ds.predictor_index
        block = values[:, pidx]
        block[miss] = cur[miss]
        values[:, pidx] = block
        mask = np.array(ds.mask, copy=True)
        mask[:, pidx] = True
        return ds.replace(values=values, mask=mask)

    def transform(self, X, y=None, rng=None):
        """Completed predictor matrix (first imputation for ``multiple``)."""
        completed = self.apply(X, y, rng)
        return completed.datasets[0].values[:, completed.datasets[0].predictor_index]

    def to_dict(self) -> dict:
        check_is_fitted(self, "predictors_")
        return {
            "format_version": PACKAGE_FORMAT_VERSION,
            "strategy": self.strategy,
            "options": {
                "include_outcome": bool(self.include_outcome),
                "m": int(self.m),
                "n_cycles": int(self.n_cycles),
                "stochastic": bool(self.stochastic),
            },
            "predictors": [{"name": n, "kind": k} for n, k in zip(self.predictors_, self.kinds_)],
            "outcome": self.outcome_,
            "summaries": {k: float(v) for k, v in self.summaries_.items()},
            "variables": [self.models_[n].to_dict() for n in self.predictors_ if n in self.models_],
            "provenance": self.provenance_,
        }

    @classmethod
    def from_dict(cls, d) -> "Imputer":
        version = d.get("format_version")
        if version != PACKAGE_FORMAT_VERSION:
            raise DecodeError(f"imputation package format_version: expected {PACKAGE_FORMAT_VERSION}, found {version}")
        try:
            opts = d["options"]
            pkg = cls(d["strategy"], opts["include_outcome"], opts["m"], opts["n_cycles"], opts["stochastic"])
            pkg._check_params()
            pkg.predictors_ = tuple(p["name"] for p in d["predictors"])
            pkg.kinds_ = tuple(p["kind"] for p in d["predictors"])
            pkg.outcome_ = d["outcome"]
            pkg.summaries_ = {k: float(v) for k, v in d["summaries"].items()}
            pkg.models_ = {v["name"]: VariableModel.from_dict(v) for v in d["variables"]}
            pkg.provenance_ = dict(d.get("provenance", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise DecodeError(f"malformed imputation package: {exc!r}") from exc
        return pkg


def fit_package(strategy: str, ds: Dataset, include_outcome: bool = False, rng=None, m: int = 5,
                n_cycles: int = 10, provenance=None) -> Imputer:
    return Imputer(strategy, include_outcome, m, n_cycles).fit(ds, rng=rng, provenance=provenance)


def apply_package(pkg: Imputer, ds: Dataset, rng=None) -> CompletedData:
    return pkg.apply(ds, rng=rng)


def encode_package(pkg: Imputer) -> bytes:
    return json.dumps(pkg.to_dict(), allow_nan=False).encode("utf-8")


def decode_package(data: bytes) -> Imputer:
    try:
        d = json.loads(data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"cannot decode imputation package: {exc}") from exc
    if not isinstance(d, dict):
        raise DecodeError("imputation package must be a JSON object")
    return Imputer.from_dict(d)
