"""Simulated cohorts with a binary outcome and missingness in X1.

Population model::

    (X1, X2) ~ N(0, [[1, rho], [rho, 1]]),   U ~ N(0, 1)
    X1 <- 1{X1 > z_{0.7}}                     (categorical scenarios only)
    P(Y = 1) = expit(g0 + g1 X1 + g2 X2 + g3 U)
    P(X1 observed) = expit(b0 + b1 X1 + b2 X2 + b3 U)

``g0`` and ``b0`` are solved per sample so that the realized mean
probabilities hit the requested outcome prevalence and observed fraction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, ndtri

from .exceptions import CalibrationError
from .rng import SeedSpec, derive_stream, sample_bivariate_normal
from .tabular import BINARY, CONTINUOUS, LATENT, OUTCOME, PREDICTOR, ColumnSpec, Dataset, random_split

DEVELOPMENT = "development"
VALIDATION = "validation"


def _beta(b):
    b = tuple(float(v) for v in b)
    if len(b) != 3:
        raise ValueError(f"missingness effects need 3 values (X1, X2, U), got {b}")
    return b


@dataclass(frozen=True)
class ScenarioConfig:
    x1_kind: str = CONTINUOUS
    rho: float = 0.0
    gamma1: float = 0.5
    gamma2: float = 0.5
    gamma3: float = 0.5
    target_prevalence: float = 0.2
    beta_dev: tuple = (0.0, 0.0, 0.0)
    beta_val: tuple = (0.0, 0.0, 0.0)
    target_missing: float = 0.5
    n_dev: int = 50_000
    n_val: int = 50_000
    iterations: int = 100
    x1_prevalence: float = 0.3
    scenario_id: str = field(default="", compare=False)

    def __post_init__(self):
        if self.x1_kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"x1_kind must be {CONTINUOUS!r} or {BINARY!r}, got {self.x1_kind!r}")
        for name in ("target_prevalence", "x1_prevalence"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not 0.0 <= self.target_missing < 1.0:
            raise ValueError("target_missing must lie in [0, 1)")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        if self.n_dev < 1 or self.n_val < 1 or self.iterations < 1:
            raise ValueError("n_dev, n_val and iterations must be positive")
        object.__setattr__(self, "beta_dev", _beta(self.beta_dev))
        object.__setattr__(self, "beta_val", _beta(self.beta_val))
        for name in ("rho", "gamma1", "gamma2", "gamma3", "target_prevalence", "target_missing", "x1_prevalence"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.scenario_id:
            object.__setattr__(self, "scenario_id", self.stable_id())

    def parameters(self) -> dict:
        d = asdict(self)
        d.pop("scenario_id")
        d["beta_dev"] = list(self.beta_dev)
        d["beta_val"] = list(self.beta_val)
        return d

    def stable_id(self) -> str:
        """Hash of every data-generating parameter; the iteration count is excluded."""
        params = self.parameters()
        params.pop("iterations")
        blob = json.dumps(params, sort_keys=True).encode()
        return hashlib.blake2b(blob, digest_size=6).hexdigest()

    @property
    def dag_dev(self) -> str:
        return dag_label(self.beta_dev, self.target_missing)

    @property
    def dag_val(self) -> str:
        return dag_label(self.beta_val, self.target_missing)


@dataclass(frozen=True, eq=False)
class GeneratedCohort:
    full_data: Dataset
    masked_data: Dataset
    realized_prevalence: float
    realized_missing: float
    dag_label: str


def dag_label(beta, target_missing: float = 0.5) -> str:
    """Missingness DAG implied by which effects are nonzero.

    a: no missingness, b: MCAR, c: MAR on X2, d: MNAR on X1, e: MNAR via U
    (outcome-related), f: MNAR on both X1 and U.
    """
    b1, b2, b3 = _beta(beta)
    if target_missing == 0:
        return "a"
    if b1 != 0 and b3 != 0:
        return "f"
    if b1 != 0:
        return "d"
    if b3 != 0:
        return "e"
    if b2 != 0:
        return "c"
    return "b"


def calibrate_intercept(linear_terms, target: float, lo: float = -40.0, hi: float = 40.0) -> float:
    """Intercept ``c`` with ``mean(expit(c + terms)) == target``, by bisection."""
    terms = np.asarray(linear_terms, dtype=float).ravel()
    if terms.size == 0:
        raise ValueError("need at least one row to calibrate an intercept")
    if not 0.0 < target < 1.0:
        raise ValueError(f"target must lie in (0, 1), got {target}")
    if np.isnan(terms).any():
        raise CalibrationError("linear terms contain NaN")

    def mean_prob(c):
        return float(expit(c + terms).mean())

    f_lo, f_hi = mean_prob(lo), mean_prob(hi)
    if not f_lo <= target <= f_hi:
        raise CalibrationError(
            f"target {target} unattainable: mean probability spans [{f_lo:.6g}, {f_hi:.6g}] on [{lo}, {hi}]"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_prob(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def dichotomize(col, target_prev: float) -> np.ndarray:
    """1 where a standard-normal column exceeds its theoretical (1 - target_prev) quantile."""
    if not 0.0 < target_prev < 1.0:
        raise ValueError(f"target_prev must lie in (0, 1), got {target_prev}")
    threshold = ndtri(1.0 - target_prev)
    return (np.asarray(col, dtype=float) > threshold).astype(float)


def cohort_columns(x1_kind: str = CONTINUOUS):
    return (
        ColumnSpec("X1", x1_kind, PREDICTOR),
        ColumnSpec("X2", CONTINUOUS, PREDICTOR),
        ColumnSpec("U", CONTINUOUS, LATENT),
        ColumnSpec("Y", BINARY, OUTCOME),
    )


def generate_population(cfg: ScenarioConfig, n: int, rng: np.random.Generator) -> Dataset:
    """Fully observed (X1, X2, U, Y) sample with the outcome intercept calibrated on it."""
    x1, x2 = sample_bivariate_normal(n, cfg.rho, rng)
    u = rng.standard_normal(n)
    if cfg.x1_kind == BINARY:
        x1 = dichotomize(x1, cfg.x1_prevalence)
    terms = cfg.gamma1 * x1 + cfg.gamma2 * x2 + cfg.gamma3 * u
    g0 = calibrate_intercept(terms, cfg.target_prevalence)
    y = (rng.random(n) < expit(g0 + terms)).astype(float)
    values = np.column_stack([x1, x2, u, y])
    return Dataset(cohort_columns(cfg.x1_kind), values, np.ones_like(values, dtype=bool))


def induce_missingness(ds: Dataset, beta, target_missing: float, rng: np.random.Generator,
                       column: str = "X1") -> Dataset:
    """Mask ``column`` row-wise with P(observed) = expit(b0 + b1 X1 + b2 X2 + b3 U).

    ``b0`` is calibrated so that the mean observation probability equals
    ``1 - target_missing``. Only the mask of ``column`` changes.
    """
    b1, b2, b3 = _beta(beta)
    if not 0.0 <= target_missing < 1.0:
        raise ValueError("target_missing must lie in [0, 1)")
    if target_missing == 0.0:
        return ds
    terms = b1 * ds.column("X1") + b2 * ds.column("X2") + b3 * ds.column("U")
    b0 = calibrate_intercept(terms, 1.0 - target_missing)
    observed = rng.random(ds.n_rows) < expit(b0 + terms)
    mask = ds.mask.copy()
    mask[:, ds.index(column)] = observed
    return ds.replace(mask=mask)


def _cohort(full: Dataset, masked: Dataset, dag: str) -> GeneratedCohort:
    j = masked.index("X1")
    missing = float((~masked.mask[:, j]).mean()) if masked.n_rows else 0.0
    prevalence = float(full.column("Y").mean()) if full.n_rows else 0.0
    return GeneratedCohort(full, masked, prevalence, missing, dag)


def generate_cohort(cfg: ScenarioConfig, stage: str, rng: np.random.Generator) -> GeneratedCohort:
    """A single stand-alone cohort of the stage's size and missingness mechanism."""
    if stage not in (DEVELOPMENT, VALIDATION):
        raise ValueError(f"stage must be {DEVELOPMENT!r} or {VALIDATION!r}")
    n = cfg.n_dev if stage == DEVELOPMENT else cfg.n_val
    beta = cfg.beta_dev if stage == DEVELOPMENT else cfg.beta_val
    full = generate_population(cfg, n, rng)
    masked = induce_missingness(full, beta, cfg.target_missing, rng)
    return _cohort(full, masked, dag_label(beta, cfg.target_missing))


def generate_cohorts(cfg: ScenarioConfig, seed: SeedSpec):
    """Development and validation cohorts split from one calibrated population.

    Each step draws from its own stream under ``seed`` so that changing,
    say, the validation mechanism leaves the development cohort untouched.
    """
    pop = generate_population(cfg, cfg.n_dev + cfg.n_val, derive_stream(seed.child("population")))
    dev_full, val_full = random_split(pop, cfg.n_dev, derive_stream(seed.child("split")))
    dev_masked = induce_missingness(dev_full, cfg.beta_dev, cfg.target_missing, derive_stream(seed.child("missing-dev")))
    val_masked = induce_missingness(val_full, cfg.beta_val, cfg.target_missing, derive_stream(seed.child("missing-val")))
    return (
        _cohort(dev_full, dev_masked, cfg.dag_dev),
        _cohort(val_full, val_masked, cfg.dag_val),
    )


def generate_registry_standin(n: int = 6600, rng: np.random.Generator | None = None,
                              prevalence: float = 0.0309, missing: float = 0.3) -> Dataset:
    """Synthetic registry-like cohort for exercising the bootstrap harness.

    Six correlated predictors (four continuous, two binary) and a rare binary
    outcome. ``C1`` and ``C2`` are missing at random, each at ``missing``
    proportion, with missingness driven by the fully observed ``C3`` and
    ``B1``.
    """
    rng = np.random.default_rng() if rng is None else rng
    corr = np.array([
        [1.0, 0.5, 0.4, 0.3],
        [0.5, 1.0, 0.3, 0.2],
        [0.4, 0.3, 1.0, 0.2],
        [0.3, 0.2, 0.2, 1.0],
    ])
    z = rng.standard_normal((n, 4)) @ np.linalg.cholesky(corr).T
    b1 = (0.6 * z[:, 0] + 0.8 * rng.standard_normal(n) > ndtri(0.7)).astype(float)
    b2 = (rng.random(n) < 0.4).astype(float)
    terms = 0.6 * z[:, 0] - 0.5 * z[:, 1] + 0.4 * z[:, 2] + 0.3 * z[:, 3] + 0.5 * b1 + 0.3 * b2
    g0 = calibrate_intercept(terms, prevalence)
    y = (rng.random(n) < expit(g0 + terms)).astype(float)
    values = np.column_stack([z, b1, b2, y])
    columns = (
        ColumnSpec("C1"), ColumnSpec("C2"), ColumnSpec("C3"), ColumnSpec("C4"),
        ColumnSpec("B1", BINARY), ColumnSpec("B2", BINARY), ColumnSpec("Y", BINARY, OUTCOME),
    )
    mask = np.ones_like(values, dtype=bool)
    if missing <= 0:
        return Dataset(columns, values, mask)
    for col, drivers in ((0, (0.8, 0.6)), (1, (-0.6, 0.8))):
        t = drivers[0] * z[:, 2] + drivers[1] * b1
        b0 = calibrate_intercept(t, 1.0 - missing)
        mask[:, col] = rng.random(n) < expit(b0 + t)
    return Dataset(columns, values, mask)
