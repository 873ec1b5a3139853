"""Discrimination, calibration and accuracy of predicted probabilities."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .exceptions import UndefinedMetricError
from scipy.special import expit

from .glm import GRAD_TOL, fit_logistic

METRICS = ("auc", "brier", "cal_intercept", "cal_slope")
PROB_CLIP = 1e-10


@dataclass(frozen=True)
class PerfReport:
    auc: float
    brier: float
    cal_intercept: float
    cal_slope: float
    n_rows: int
    n_events: int
    k_imputations: int = 1

    def metric(self, name: str) -> float:
        if name not in METRICS:
            raise ValueError(f"unknown metric {name!r}; expected one of {METRICS}")
        return getattr(self, name)

    def as_dict(self) -> dict:
        return asdict(self)


def _check(probs, y):
    probs = np.asarray(probs, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if probs.shape != y.shape:
        raise ValueError(f"{probs.size} probabilities for {y.size} outcomes")
    return probs, y


def _both_classes(y, name):
    n_events = int(y.sum())
    if n_events == 0 or n_events == y.size:
        raise UndefinedMetricError(f"{name} undefined: outcome has a single class ({n_events} events of {y.size})")


def auc(probs, y) -> float:
    """Area under the ROC curve via the Mann-Whitney rank sum (ties count 1/2)."""
    probs, y = _check(probs, y)
    _both_classes(y, "AUC")
    events = y == 1
    n1 = int(events.sum())
    n0 = y.size - n1
    ranks = rankdata(probs)
    u = ranks[events].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def brier(probs, y) -> float:
    probs, y = _check(probs, y)
    if probs.size == 0:
        raise UndefinedMetricError("Brier score undefined for zero rows")
    d = probs - y
    return float(d @ d / d.size)


def logit(probs) -> np.ndarray:
    p = np.clip(np.asarray(probs, dtype=float), PROB_CLIP, 1.0 - PROB_CLIP)
    return np.log(p) - np.log1p(-p)


def _newton_columns(L, y, slope, max_iter=50):
    """Vectorised Newton fits of y on each column of L.

    With ``slope=True`` each column gets an intercept and slope; otherwise
    the column is an offset and only an intercept is estimated. Returns
    (intercepts, slopes, converged) with one entry per column.
    """
    k = L.shape[1]
    a = np.zeros(k)
    b = np.ones(k)
    done = np.zeros(k, dtype=bool)
    for _ in range(max_iter):
        mu = expit(a + L * b)
        r = y[:, None] - mu
        g0 = r.sum(axis=0)
        g1 = (r * L).sum(axis=0) if slope else np.zeros(k)
        done = np.maximum(np.abs(g0), np.abs(g1)) <= GRAD_TOL
        if done.all():
            break
        w = mu * (1.0 - mu)
        h00 = w.sum(axis=0)
        if slope:
            wl = w * L
            h01 = wl.sum(axis=0)
            h11 = (wl * L).sum(axis=0)
            det = h00 * h11 - h01 * h01
            with np.errstate(divide="ignore", invalid="ignore"):
                da = (h11 * g0 - h01 * g1) / det
                db = (h00 * g1 - h01 * g0) / det
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                da = g0 / h00
            db = np.zeros(k)
        bad = ~np.isfinite(da) | ~np.isfinite(db)
        if bad.any():
            break
        a = np.where(done, a, a + da)
        b = np.where(done, b, b + db)
    if not slope:
        b = np.full(k, np.nan)
    return a, b, done & np.isfinite(a)


def calibration(probs, y):
    """Calibration intercept (slope fixed at 1) and calibration slope.

    Both come from logistic regressions of ``y`` on the logit of ``probs``:
    the slope from an ordinary fit, the intercept from an intercept-only fit
    with the logit as offset.
    """
    probs, y = _check(probs, y)
    _both_classes(y, "calibration")
    lp = logit(probs)
    slope_fit = fit_logistic(lp[:, None], y)
    intercept_fit = fit_logistic(None, y, offset=lp, freeze_slope_to_offset=True)
    return float(intercept_fit.coefficients[0]), float(slope_fit.coefficients[1])


def evaluate(prob_matrix, y, pool: str = "average") -> PerfReport:
    """Performance of an (n, k) probability matrix, one column per imputation.

    ``pool="average"`` computes every metric per column and averages the k
    values; ``pool="stack"`` scores all columns stacked as one long vector.
    """
    P = np.asarray(prob_matrix, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if P.shape[0] != y.size:
        raise ValueError(f"{P.shape[0]} rows of probabilities for {y.size} outcomes")
    k = P.shape[1]
    if k < 1:
        raise ValueError("need at least one probability column")
    if pool == "stack":
        cols = [P.T.ravel()]
        ys = np.tile(y, k)
    elif pool == "average":
        cols = [P[:, j] for j in range(k)]
        ys = y
    else:
        raise ValueError(f"pool must be 'average' or 'stack', got {pool!r}")
    for yy in ([ys] if pool == "stack" else [y]):
        _both_classes(yy, "calibration")
    L = logit(np.column_stack(cols))
    ci, _, ok_i = _newton_columns(L, ys, slope=False)
    _, cs, ok_s = _newton_columns(L, ys, slope=True)
    rows = []
    for j, col in enumerate(cols):
        if not (ok_i[j] and ok_s[j]):
            ci[j], cs[j] = calibration(col, ys)
        rows.append((auc(col, ys), brier(col, ys), ci[j], cs[j]))
    vals = np.sort(np.array(rows), axis=0).sum(axis=0) / len(rows)
    return PerfReport(*(float(v) for v in vals), n_rows=int(y.size), n_events=int(y.sum()), k_imputations=k)
