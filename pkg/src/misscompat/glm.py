"""Linear and logistic regression by maximum likelihood.

Designs are passed without an intercept column; every fit adds one and
returns coefficients as ``[intercept, slope_1, ..., slope_k]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg
from scipy.special import expit

from .exceptions import DegenerateOutcomeError, NumericError, SingularDesignError

LP_CLAMP = 36.0
RIDGE_FALLBACK = 1e-4
MAX_ITER = 100
GRAD_TOL = 1e-8
LOGLIK_RTOL = 1e-10
# fitted linear predictors beyond this mean probabilities numerically 0 or 1
SEPARATION_LP = 30.0


@dataclass(frozen=True, eq=False)
class LinearFit:
    coefficients: np.ndarray
    residual_variance: float
    coefficient_covariance: np.ndarray
    unscaled_covariance: np.ndarray  # (X'X)^-1
    dof: int
    n: int

    def to_dict(self):
        return {
            "type": "linear",
            "coefficients": self.coefficients.tolist(),
            "covariance": self.coefficient_covariance.tolist(),
            "unscaled_covariance": self.unscaled_covariance.tolist(),
            "residual_variance": float(self.residual_variance),
            "dof": int(self.dof),
            "n": int(self.n),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["coefficients"], float),
            float(d["residual_variance"]),
            np.asarray(d["covariance"], float),
            np.asarray(d["unscaled_covariance"], float),
            int(d["dof"]),
            int(d["n"]),
        )


@dataclass(frozen=True, eq=False)
class LogisticFit:
    coefficients: np.ndarray
    coefficient_covariance: np.ndarray
    converged: bool
    ridge_used: float
    n: int
    n_iter: int = 0
    gradient_norm: float = 0.0

    def to_dict(self):
        return {
            "type": "logistic",
            "coefficients": self.coefficients.tolist(),
            "covariance": self.coefficient_covariance.tolist(),
            "residual_variance": None,
            "converged": bool(self.converged),
            "ridge_used": float(self.ridge_used),
            "n": int(self.n),
            "n_iter": int(self.n_iter),
            "gradient_norm": float(self.gradient_norm),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["coefficients"], float),
            np.asarray(d["covariance"], float),
            bool(d["converged"]),
            float(d["ridge_used"]),
            int(d["n"]),
            int(d.get("n_iter", 0)),
            float(d.get("gradient_norm", 0.0)),
        )


class CoefficientDraw(NamedTuple):
    coefficients: np.ndarray
    residual_variance: float | None


def _design(X, n):
    if X is None:
        return np.ones((n, 1))
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != n:
        raise ValueError(f"design has {X.shape[0]} rows but response has {n}")
    return np.column_stack([np.ones(n), X])


def fit_linear(X, y, names=None) -> LinearFit:
    """Ordinary least squares with a rank check.

    Raises SingularDesignError naming the columns that are linear
    combinations of the others (``"intercept"`` for the constant column).
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    D = _design(X, n)
    k = D.shape[1]
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} rows for {k} coefficients, got {n}")
    if names is None:
        names = [f"x{j}" for j in range(1, k)]
    labels = ["intercept", *names]
    q, r, piv = linalg.qr(D, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag[0] * max(n, k) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    if rank < k:
        dependent = [labels[piv[j]] for j in range(rank, k)]
        raise SingularDesignError(f"design is rank deficient; dependent columns: {dependent}", dependent)
    coef_p = linalg.solve_triangular(r, q.T @ y)
    rinv = linalg.solve_triangular(r, np.eye(k))
    xtx_inv_p = rinv @ rinv.T
    coef = np.empty(k)
    coef[piv] = coef_p
    xtx_inv = np.empty((k, k))
    xtx_inv[np.ix_(piv, piv)] = xtx_inv_p
    resid = y - D @ coef
    dof = n - k
    sigma2 = float(resid @ resid) / dof
    return LinearFit(coef, sigma2, sigma2 * xtx_inv, xtx_inv, dof, n)


def predict_linear(fit: LinearFit, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != fit.coefficients.size - 1:
        raise ValueError(f"expected {fit.coefficients.size - 1} columns, got {X.shape[1]}")
    return fit.coefficients[0] + X @ fit.coefficients[1:]


def _softplus(eta):
    return np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))


def _loglik(D, y, offset, beta, penalty):
    eta = offset + D @ beta
    return float(y @ eta - _softplus(eta).sum() - 0.5 * penalty @ (beta * beta)), eta


def _irls(D, y, offset, ridge, start):
    k = D.shape[1]
    penalty = np.full(k, float(ridge))
    penalty[0] = 0.0
    beta = start.copy()
    ll, eta = _loglik(D, y, offset, beta, penalty)
    stalls = 0
    singular = False
    grad_norm = np.inf
    it = 0
    for it in range(1, MAX_ITER + 1):
        mu = expit(eta)
        grad = D.T @ (y - mu) - penalty * beta
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < GRAD_TOL:
            break
        w = mu * (1.0 - mu)
        H = (D * w[:, None]).T @ D
        H[np.diag_indices(k)] += penalty
        try:
            step = linalg.solve(H, grad, assume_a="pos", check_finite=False)
        except (linalg.LinAlgError, ValueError):
            singular = True
            break
        if not np.all(np.isfinite(step)):
            singular = True
            break
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new, eta_new = _loglik(D, y, offset, cand, penalty)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        rel = abs(ll_new - ll) / (abs(ll) + 1e-300)
        beta, ll, eta = cand, ll_new, eta_new
        stalls = stalls + 1 if rel < LOGLIK_RTOL else 0
        if stalls >= 3:
            grad_norm = float(np.max(np.abs(D.T @ (y - expit(eta)) - penalty * beta)))
            break
    else:
        grad_norm = float(np.max(np.abs(D.T @ (y - expit(eta)) - penalty * beta)))
    converged = (not singular) and grad_norm <= GRAD_TOL
    return beta, converged, singular, grad_norm, it, penalty


def fit_logistic(X, y, offset=None, freeze_slope_to_offset=False, ridge=0.0) -> LogisticFit:
    """Logistic regression by IRLS with step-halving.

    With ``freeze_slope_to_offset`` only an intercept is estimated and
    ``offset`` enters with coefficient 1 (``X`` is ignored). If the
    unpenalized fit fails to converge or separates, it is refit with a ridge
    penalty of 1e-4 on the slopes and ``ridge_used`` records the penalty.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n == 0:
        raise ValueError("empty design: no rows to fit")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("logistic response must be 0/1")
    D = np.ones((n, 1)) if freeze_slope_to_offset else _design(X, n)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if off.shape != (n,):
        raise ValueError("offset must have one value per row")
    ybar = y.mean()
    if offset is None and ybar in (0.0, 1.0):
        raise DegenerateOutcomeError(f"outcome is all {int(ybar)}; logistic fit undefined")
    start = np.zeros(D.shape[1])
    if offset is None:
        start[0] = np.log(ybar / (1.0 - ybar))

    beta, converged, singular, grad_norm, it, penalty = _irls(D, y, off, ridge, start)
    separated = singular or np.max(np.abs(off + D @ beta)) > SEPARATION_LP
    ridge_used = float(ridge)
    if ridge == 0.0 and D.shape[1] > 1 and (not converged or separated):
        beta, converged, singular, grad_norm, it, penalty = _irls(D, y, off, RIDGE_FALLBACK, start)
        ridge_used = RIDGE_FALLBACK

    mu = expit(off + D @ beta)
    H = (D * (mu * (1.0 - mu))[:, None]).T @ D
    H[np.diag_indices(D.shape[1])] += penalty
    try:
        cov = linalg.inv(H)
    except linalg.LinAlgError:
        cov = linalg.pinv(H)
    cov = 0.5 * (cov + cov.T)
    return LogisticFit(beta, cov, bool(converged), ridge_used, n, it, grad_norm)


def linear_predictor(coefficients, X, offset=None) -> np.ndarray:
    coefficients = np.asarray(coefficients, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != coefficients.size - 1:
        raise ValueError(f"expected {coefficients.size - 1} predictor columns, got {X.shape[1]}")
    eta = coefficients[0] + X @ coefficients[1:]
    if offset is not None:
        eta = eta + np.asarray(offset, dtype=float)
    return eta


def predict_probability(fit, X, offset=None) -> np.ndarray:
    """Logistic probabilities with the linear predictor clamped to +-36.

    ``fit`` may be a LogisticFit or a raw coefficient vector.
    """
    coef = fit.coefficients if hasattr(fit, "coefficients") else fit
    eta = linear_predictor(coef, X, offset)
    return expit(np.clip(eta, -LP_CLAMP, LP_CLAMP))


def _cholesky_psd(cov):
    cov = np.asarray(cov, dtype=float)
    if cov.size == 0:
        return cov
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    if vals.min() < -1e-8 * scale:
        raise NumericError(
            "coefficient covariance is not positive semidefinite "
            f"(min eigenvalue {vals.min():.3g}); refit with a ridge penalty"
        )
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def posterior_draw(fit, rng: np.random.Generator) -> CoefficientDraw:
    """One draw of regression coefficients from their approximate posterior.

    Linear fits draw the residual variance as ``dof * s2 / chi2(dof)`` and
    then coefficients from N(b, s2* (X'X)^-1). Logistic fits draw from the
    asymptotic normal N(b, cov).
    """
    if isinstance(fit, LinearFit):
        L = _cholesky_psd(fit.unscaled_covariance)
        sigma2 = fit.dof * fit.residual_variance / rng.chisquare(fit.dof)
        z = rng.standard_normal(fit.coefficients.size)
        return CoefficientDraw(fit.coefficients + np.sqrt(sigma2) * (L @ z), float(sigma2))
    L = _cholesky_psd(fit.coefficient_covariance)
    z = rng.standard_normal(fit.coefficients.size)
    return CoefficientDraw(fit.coefficients + L @ z, None)
