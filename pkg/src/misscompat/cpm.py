"""Logistic prediction models developed under a missing-data handling method.

A fitted :class:`MissingDataCPM` is the model bundle: the logistic model (or
pattern sub-model family), the imputation package used at development, and
the development mean/mode summaries, so that every validation handling can
be reproduced on new data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import __version__
from ._validation import as_dataset, check_outcome, check_predictors
from .exceptions import (
    DecodeError,
    DegenerateOutcomeError,
    DevelopmentError,
    HandlingError,
    MissCompatError,
)
from .glm import fit_logistic, predict_probability
from .impute import CompletedData, Imputer
from .tabular import Dataset

DEV_METHODS = ("fully_observed", "cca", "mean_mode", "regression", "mi_no_y", "mi_with_y", "psm")
HANDLING_METHODS = DEV_METHODS
NONE, TRANSPORTED, REFIT = "none", "transported", "refit"
BUNDLE_FORMAT_VERSION = 1

_MODES = {
    "fully_observed": (NONE,),
    "cca": (NONE,),
    "psm": (TRANSPORTED,),
    "mean_mode": (TRANSPORTED, REFIT),
    "regression": (TRANSPORTED, REFIT),
    "mi_no_y": (TRANSPORTED, REFIT),
    "mi_with_y": (TRANSPORTED, REFIT),
}


@dataclass(frozen=True, order=True)
class Handling:
    """How missing predictors are resolved in the data a model is scored on."""

    method: str
    mode: str = ""

    def __post_init__(self):
        if self.method not in _MODES:
            raise ValueError(f"unknown handling {self.method!r}; expected one of {list(_MODES)}")
        allowed = _MODES[self.method]
        mode = self.mode or (allowed[0] if len(allowed) == 1 or self.method == "mean_mode" else REFIT)
        if mode not in allowed:
            raise ValueError(f"handling {self.method!r} supports modes {list(allowed)}, got {mode!r}")
        object.__setattr__(self, "mode", mode)

    @property
    def label(self) -> str:
        return f"{self.method}:{self.mode}"

    @classmethod
    def parse(cls, text: str) -> "Handling":
        method, _, mode = text.strip().partition(":")
        return cls(method, mode)

    def __str__(self):
        return self.label


def admitted(dev_method: str, handling: Handling) -> bool:
    """Whether a (development method, validation handling) pair is in the admitted matrix.

    Every model may be scored on fully observed data, complete cases,
    development mean/mode values, and regression or multiple imputation
    refit to the validation data. Transported regression or multiple
    imputation requires the matching development package, and pattern
    routing requires a pattern sub-model family.
    """
    if handling.method in ("fully_observed", "cca", "mean_mode"):
        return handling.mode != REFIT
    if handling.method == "psm":
        return dev_method == "psm"
    if handling.mode == REFIT:
        return True
    return dev_method == handling.method


def admitted_handlings(dev_method: str) -> list:
    out = [
        Handling("fully_observed"),
        Handling("cca"),
        Handling("mean_mode", TRANSPORTED),
        Handling("regression", REFIT),
        Handling("mi_no_y", REFIT),
        Handling("mi_with_y", REFIT),
    ]
    if dev_method in ("regression", "mi_no_y", "mi_with_y"):
        out.append(Handling(dev_method, TRANSPORTED))
    if dev_method == "psm":
        out.append(Handling("psm"))
    return out


@dataclass(frozen=True, eq=False)
class Cpm:
    predictors: tuple
    coefficients: np.ndarray
    covariance: np.ndarray
    ridge_used: float = 0.0

    def predict(self, X) -> np.ndarray:
        return predict_probability(self.coefficients, X)

    def to_dict(self):
        return {
            "predictors": list(self.predictors),
            "coefficients": self.coefficients.tolist(),
            "covariance": self.covariance.tolist(),
            "ridge_used": float(self.ridge_used),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d["predictors"]),
            np.asarray(d["coefficients"], float),
            np.asarray(d["covariance"], float).reshape(len(d["coefficients"]), -1),
            float(d.get("ridge_used", 0.0)),
        )


def _pattern_key(pattern) -> str:
    return "".join(str(int(b)) for b in pattern)


@dataclass(frozen=True, eq=False)
class PatternSubmodelFamily:
    """One logistic model per observed/missing predictor pattern.

    Patterns absent from training, or with too few rows or events, map to
    ``None`` and are scored by the whole-cohort intercept-only ``fallback``.
    """

    predictors: tuple
    submodels: dict
    counts: dict
    fallback: Cpm
    min_rows: int = 25
    min_events: int = 5

    def model_for(self, pattern) -> Cpm:
        model = self.submodels.get(tuple(int(b) for b in pattern))
        return self.fallback if model is None else model

    @property
    def full_model(self) -> Cpm:
        return self.model_for((1,) * len(self.predictors))

    def predict(self, ds: Dataset) -> np.ndarray:
        pidx = ds.predictor_index
        pm = ds.mask[:, pidx]
        X = ds.values[:, pidx]
        out = np.empty(ds.n_rows)
        uniq, inverse = np.unique(pm, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).ravel()
        for u, pattern in enumerate(uniq):
            rows = np.flatnonzero(inverse == u)
            model = self.model_for(pattern)
            cols = np.flatnonzero(pattern) if model is not self.fallback else np.array([], dtype=int)
            out[rows] = model.predict(X[np.ix_(rows, cols)])
        return out

    def to_dict(self):
        entries = []
        for pattern in sorted(self.counts, reverse=True):
            model = self.submodels.get(pattern)
            n, events = self.counts[pattern]
            entries.append({
                "pattern": _pattern_key(pattern),
                "n": int(n),
                "events": int(events),
                "model": None if model is None else model.to_dict(),
            })
        return {
            "type": "psm",
            "predictors": list(self.predictors),
            "patterns": entries,
            "fallback": self.fallback.to_dict(),
            "min_rows": self.min_rows,
            "min_events": self.min_events,
        }

    @classmethod
    def from_dict(cls, d):
        submodels, counts = {}, {}
        for e in d["patterns"]:
            key = tuple(int(c) for c in e["pattern"])
            counts[key] = (int(e["n"]), int(e["events"]))
            submodels[key] = None if e["model"] is None else Cpm.from_dict(e["model"])
        return cls(tuple(d["predictors"]), submodels, counts, Cpm.from_dict(d["fallback"]),
                   int(d["min_rows"]), int(d["min_events"]))


def _sorted_mean(arr, axis=0):
    # summing sorted values makes the result independent of input order
    arr = np.asarray(arr, dtype=float)
    return np.sort(arr, axis=axis).sum(axis=axis) / arr.shape[axis]


def rubin_pool(estimates, covariances):
    """Pool per-imputation coefficient vectors and covariance matrices.

    Returns the element-wise mean of the estimates and the total covariance
    ``W + (1 + 1/m) B`` (within plus inflated between-imputation variance).
    """
    Q = np.asarray(estimates, dtype=float)
    if Q.ndim != 2 or Q.shape[0] < 1:
        raise ValueError("estimates must be a non-empty sequence of equal-length vectors")
    m, k = Q.shape
    U = np.asarray(covariances, dtype=float)
    if U.shape != (m, k, k):
        raise ValueError(f"covariances must have shape {(m, k, k)}, got {U.shape}")
    qbar = _sorted_mean(Q)
    W = _sorted_mean(U)
    if m > 1:
        dev = Q - qbar
        B = _sorted_mean(dev[:, :, None] * dev[:, None, :]) * m / (m - 1)
    else:
        B = np.zeros((k, k))
    return qbar, W + (1.0 + 1.0 / m) * B


def _fit_cpm(predictors, X, y) -> Cpm:
    try:
        fit = fit_logistic(X, y)
    except DegenerateOutcomeError as exc:
        raise DevelopmentError(str(exc)) from exc
    return Cpm(tuple(predictors), fit.coefficients, fit.coefficient_covariance, fit.ridge_used)


def fit_pattern_family(ds: Dataset, min_rows: int = 25, min_events: int = 5) -> PatternSubmodelFamily:
    y = check_outcome(ds, "pattern sub-model fitting")
    names = ds.predictor_names
    pidx = ds.predictor_index
    pm = ds.mask[:, pidx]
    X = ds.values[:, pidx]
    fallback = _fit_cpm((), None, y)
    submodels, counts = {}, {}
    uniq, inverse = np.unique(pm, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    for u, pattern in enumerate(uniq):
        key = tuple(int(b) for b in pattern)
        rows = np.flatnonzero(inverse == u)
        n, events = rows.size, int(y[rows].sum())
        counts[key] = (n, events)
        submodels[key] = None
        if n < min_rows or events < min_events:
            continue
        cols = np.flatnonzero(pattern)
        try:
            submodels[key] = _fit_cpm([names[c] for c in cols], X[np.ix_(rows, cols)], y[rows])
        except MissCompatError:
            pass
    return PatternSubmodelFamily(tuple(names), submodels, counts, fallback, int(min_rows), int(min_events))


@dataclass(frozen=True, eq=False)
class Prediction:
    """Per-row probabilities, one column per completed dataset."""

    probabilities: np.ndarray  # (n_retained, k)
    rows: np.ndarray  # positions of retained input rows

    @property
    def k(self) -> int:
        return self.probabilities.shape[1]


class MissingDataCPM(ClassifierMixin, BaseEstimator):
    """Logistic prediction model developed under one missing-data method.

    Parameters
    ----------
    method : str
        One of ``DEV_METHODS``.
    m, n_cycles : int
        Multiple-imputation settings (``mi_no_y`` / ``mi_with_y``).
    psm_min_rows, psm_min_events : int
        Pattern sub-models below either threshold fall back to the
        intercept-only model.
    random_state : int, Generator or None
        Used when ``fit`` / ``predict_matrix`` get no explicit ``rng``.
    """

    def __init__(self, method="cca", m=5, n_cycles=10, psm_min_rows=25, psm_min_events=5, random_state=None):
        self.method = method
        self.m = m
        self.n_cycles = n_cycles
        self.psm_min_rows = psm_min_rows
        self.psm_min_events = psm_min_events
        self.random_state = random_state

    def _rng(self, rng):
        return rng if rng is not None else np.random.default_rng(self.random_state)

    def fit(self, X, y=None, rng=None):
        if self.method not in DEV_METHODS:
            raise ValueError(f"method must be one of {DEV_METHODS}, got {self.method!r}")
        ds = as_dataset(X, y)
        check_outcome(ds, "model development")
        rng = self._rng(rng)
        self.predictors_ = ds.predictor_names
        self.kinds_ = tuple(ds.spec(n).kind for n in self.predictors_)
        self.outcome_ = ds.outcome_name
        self.classes_ = np.array([0, 1])
        self.mean_package_ = Imputer("mean_mode").fit(ds)
        self.package_ = None
        method = self.method
        if method == "psm":
            self.model_ = fit_pattern_family(ds, self.psm_min_rows, self.psm_min_events)
        elif method in ("mi_no_y", "mi_with_y"):
            pkg = Imputer("multiple", method == "mi_with_y", self.m, self.n_cycles)
            pkg.fit(ds, rng=rng, provenance={"stage": "development"})
            completed = pkg.apply(ds, rng=rng)
            fits = [_fit_cpm(self.predictors_, d.predictor_matrix(), d.outcome()) for d in completed.datasets]
            coef, cov = rubin_pool([f.coefficients for f in fits], [f.covariance for f in fits])
            self.model_ = Cpm(self.predictors_, coef, cov, max(f.ridge_used for f in fits))
            self.package_ = pkg
        else:
            if method == "fully_observed":
                if not ds.predictor_mask().all():
                    raise DevelopmentError("fully_observed development needs data without missing predictors")
                data = ds
            else:
                if method == "mean_mode":
                    pkg = self.mean_package_
                else:
                    pkg = Imputer(method).fit(ds, provenance={"stage": "development"})
                self.package_ = pkg
                data = pkg.apply(ds).datasets[0]
            if data.n_rows == 0:
                raise DevelopmentError(f"{method}: no rows left to fit the model")
            self.model_ = _fit_cpm(self.predictors_, data.predictor_matrix(), data.outcome())
        self.metadata_ = {
            "development_method": method,
            "n_rows": int(ds.n_rows),
            "n_events": int(ds.outcome().sum()),
            "m": int(self.m),
            "n_cycles": int(self.n_cycles),
            "psm_min_rows": int(self.psm_min_rows),
            "psm_min_events": int(self.psm_min_events),
            "library_version": __version__,
        }
        return self

    @property
    def full_model_(self) -> Cpm:
        """Model applied to completed data (the all-predictor sub-model for PSM)."""
        check_is_fitted(self, "model_")
        return self.model_.full_model if isinstance(self.model_, PatternSubmodelFamily) else self.model_

    @property
    def coefficients_(self) -> np.ndarray:
        return self.full_model_.coefficients

    def predict_matrix(self, X, handling, rng=None, package=None) -> Prediction:
        return predict_bundle(self, as_dataset(X), handling, self._rng(rng), package)

    def default_handling(self) -> Handling:
        if self.method in ("mean_mode", "regression", "mi_no_y"):
            return Handling(self.method, TRANSPORTED)
        if self.method == "psm":
            return Handling("psm")
        return Handling("fully_observed")

    def predict_proba(self, X, handling=None, rng=None):
        """Two-column class probabilities, averaged over imputations.

        Defaults to the deployment-style handling of the development method;
        models developed on complete data (fully observed, CCA, MI-with-Y)
        require complete rows.
        """
        handling = self.default_handling() if handling is None else handling
        if isinstance(handling, str):
            handling = Handling.parse(handling)
        pred = self.predict_matrix(X, handling, rng)
        if pred.rows.size != len(as_dataset(X)):
            raise HandlingError(f"{handling.label} dropped rows; use predict_matrix for row bookkeeping")
        p = _sorted_mean(pred.probabilities, axis=1)
        return np.column_stack([1.0 - p, p])

    def predict(self, X, handling=None, rng=None):
        return (self.predict_proba(X, handling, rng)[:, 1] >= 0.5).astype(int)

    def to_dict(self) -> dict:
        check_is_fitted(self, "model_")
        model = self.model_.to_dict() if isinstance(self.model_, PatternSubmodelFamily) else {
            "type": "cpm", **self.model_.to_dict()}
        return {
            "format_version": BUNDLE_FORMAT_VERSION,
            "development_method": self.method,
            "params": {k: (v if not isinstance(v, np.random.Generator) else None)
                       for k, v in self.get_params().items()},
            "predictors": [{"name": n, "kind": k} for n, k in zip(self.predictors_, self.kinds_)],
            "outcome": self.outcome_,
            "model": model,
            "package": None if self.package_ is None else self.package_.to_dict(),
            "mean_package": self.mean_package_.to_dict(),
            "metadata": self.metadata_,
        }

    @classmethod
    def from_dict(cls, d) -> "MissingDataCPM":
        version = d.get("format_version")
        if version != BUNDLE_FORMAT_VERSION:
            raise DecodeError(f"model bundle format_version: expected {BUNDLE_FORMAT_VERSION}, found {version}")
        try:
            params = dict(d["params"])
            params["method"] = d["development_method"]
            bundle = cls(**params)
            bundle.predictors_ = tuple(p["name"] for p in d["predictors"])
            bundle.kinds_ = tuple(p["kind"] for p in d["predictors"])
            bundle.outcome_ = d["outcome"]
            bundle.classes_ = np.array([0, 1])
            m = d["model"]
            bundle.model_ = PatternSubmodelFamily.from_dict(m) if m["type"] == "psm" else Cpm.from_dict(m)
            bundle.package_ = None if d["package"] is None else Imputer.from_dict(d["package"])
            bundle.mean_package_ = Imputer.from_dict(d["mean_package"])
            bundle.metadata_ = dict(d["metadata"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DecodeError):
                raise
            raise DecodeError(f"malformed model bundle: {exc!r}") from exc
        return bundle


def develop_cpm(ds: Dataset, method: str, rng=None, **options) -> MissingDataCPM:
    return MissingDataCPM(method, **options).fit(ds, rng=rng)


def _transported_package(bundle, handling, package):
    if package is not None:
        return package
    if handling.method == "mean_mode":
        return bundle.mean_package_
    pkg = bundle.package_
    if handling.method == "regression" and pkg is not None and pkg.strategy == "regression":
        return pkg
    if (handling.method in ("mi_no_y", "mi_with_y") and pkg is not None and pkg.strategy == "multiple"
            and bool(pkg.include_outcome) == (handling.method == "mi_with_y")):
        return pkg
    raise HandlingError(
        f"{handling.label}: model developed with {bundle.method!r} carries no {handling.method} package to transport"
    )


def resolve_handling(bundle: MissingDataCPM, ds: Dataset, handling: Handling, rng=None,
                     package=None) -> CompletedData | None:
    """Complete ``ds`` per ``handling``; ``None`` means pattern routing (PSM)."""
    if handling.method == "psm":
        if not isinstance(bundle.model_, PatternSubmodelFamily):
            raise HandlingError(f"psm handling needs a pattern sub-model family, model is {bundle.method!r}")
        return None
    if handling.method == "fully_observed":
        if not ds.predictor_mask().all():
            raise HandlingError("fully_observed handling needs data without missing predictors")
        return CompletedData((ds,), None, ds.mask.copy())
    if handling.method == "cca":
        return Imputer("cca").fit(ds).apply(ds)
    if handling.mode == TRANSPORTED:
        return _transported_package(bundle, handling, package).apply(ds, rng=rng)
    strategy = {"mean_mode": "mean_mode", "regression": "regression"}.get(handling.method, "multiple")
    pkg = Imputer(strategy, handling.method == "mi_with_y", bundle.m, bundle.n_cycles)
    pkg.fit(ds, rng=rng, provenance={"stage": "validation"})
    return pkg.apply(ds, rng=rng)


def score_completed(bundle: MissingDataCPM, completed: CompletedData) -> Prediction:
    model = bundle.full_model_
    if completed.rows.size == 0:
        return Prediction(np.empty((0, completed.m)), completed.rows)
    cols = [model.predict(d.predictor_matrix()) for d in completed.datasets]
    return Prediction(np.column_stack(cols), completed.rows)


def predict_bundle(bundle: MissingDataCPM, ds: Dataset, handling, rng=None, package=None) -> Prediction:
    """Score ``ds`` with ``bundle`` after resolving missing predictors per ``handling``."""
    check_is_fitted(bundle, "model_")
    if isinstance(handling, str):
        handling = Handling.parse(handling)
    check_predictors(ds, bundle.predictors_, bundle.kinds_, "model bundle")
    completed = resolve_handling(bundle, ds, handling, rng, package)
    if completed is None:
        return Prediction(bundle.model_.predict(ds)[:, None], np.arange(ds.n_rows))
    return score_completed(bundle, completed)


def save_bundle(bundle: MissingDataCPM, path) -> None:
    Path(path).write_text(json.dumps(bundle.to_dict(), allow_nan=False, indent=1), encoding="utf-8")


def load_bundle(path) -> MissingDataCPM:
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"{path}: not a model bundle: {exc}") from exc
    if not isinstance(d, dict):
        raise DecodeError(f"{path}: not a model bundle")
    return MissingDataCPM.from_dict(d)
