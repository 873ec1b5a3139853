"""Simulation grid, per-iteration development/validation pipeline, and bias tables.

One iteration develops a model under every development method and scores
each on the validation cohort under every admitted validation handling. Bias
for an estimand is the matched handling's performance minus the
performance under each other handling, per metric, averaged over
iterations.
"""

from __future__ import annotations

import itertools
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cpm import (
    DEV_METHODS,
    REFIT,
    TRANSPORTED,
    Handling,
    admitted_handlings,
    develop_cpm,
    resolve_handling,
    score_completed,
)
from .datagen import ScenarioConfig, generate_cohorts
from .exceptions import BiasError, MissCompatError
from .impute import CompletedData
from .metrics import METRICS, evaluate
from .rng import SeedSpec, derive_stream
from .tabular import BINARY, CONTINUOUS

E_ALL, E_MEAN, E_RI, E_MI, E_PSM = "E_all", "E_mean", "E_RI", "E_MI", "E_PSM"
ESTIMANDS = (E_ALL, E_MEAN, E_RI, E_MI, E_PSM)

GRID_KEYS = (
    "x1_type", "missing_prop",
    "beta1_dev", "beta2_dev", "beta3_dev",
    "beta1_val", "beta2_val", "beta3_val",
    "rho", "gamma1", "gamma3", "n_dev", "n_val", "iterations",
)

PAPER_GRID = {
    "x1_type": ["continuous", "categorical"],
    "missing_prop": [0.1, 0.2, 0.5],
    "beta1_dev": [0.0, 0.5], "beta2_dev": [0.0, 0.5], "beta3_dev": [0.0, 0.5],
    "beta1_val": [0.0, 0.5], "beta2_val": [0.0, 0.5], "beta3_val": [0.0, 0.5],
    "rho": [0.0, 0.75],
    "gamma1": [0.0, 0.5],
    "gamma3": [0.0, 0.5],
    "n_dev": [50_000], "n_val": [50_000], "iterations": [100],
}


def _desk(label, rho, beta):
    b1, b2, b3 = beta
    return {
        "x1_type": ["continuous"], "missing_prop": [0.5],
        "beta1_dev": [b1], "beta2_dev": [b2], "beta3_dev": [b3],
        "beta1_val": [b1], "beta2_val": [b2], "beta3_val": [b3],
        "rho": [rho], "gamma1": [0.5], "gamma3": [0.5],
        "n_dev": [5000], "n_val": [5000], "iterations": [200],
    }


# consistent mechanisms at development and validation
DESK_GRIDS = OrderedDict([
    ("mcar_rho0", _desk("mcar_rho0", 0.0, (0.0, 0.0, 0.0))),
    ("mnar_x_rho0", _desk("mnar_x_rho0", 0.0, (0.5, 0.0, 0.0))),
    ("mnar_y_rho0", _desk("mnar_y_rho0", 0.0, (0.0, 0.0, 0.5))),
    ("mcar_rho075", _desk("mcar_rho075", 0.75, (0.0, 0.0, 0.0))),
    ("mar_rho075", _desk("mar_rho075", 0.75, (0.0, 0.5, 0.0))),
])

PRESETS = {
    "paper": [PAPER_GRID],
    "desk": list(DESK_GRIDS.values()),
}


def _as_list(v):
    if isinstance(v, (list, tuple)):
        return list(v)
    return [v]


def scenario_from_params(p: dict) -> ScenarioConfig:
    x1_type = str(p["x1_type"]).strip().lower()
    kinds = {"continuous": CONTINUOUS, "categorical": BINARY, "binary": BINARY}
    if x1_type not in kinds:
        raise ValueError(f"x1_type must be 'continuous' or 'categorical', got {p['x1_type']!r}")
    return ScenarioConfig(
        x1_kind=kinds[x1_type],
        rho=float(p["rho"]),
        gamma1=float(p["gamma1"]),
        gamma3=float(p["gamma3"]),
        beta_dev=(float(p["beta1_dev"]), float(p["beta2_dev"]), float(p["beta3_dev"])),
        beta_val=(float(p["beta1_val"]), float(p["beta2_val"]), float(p["beta3_val"])),
        target_missing=float(p["missing_prop"]),
        n_dev=int(p["n_dev"]),
        n_val=int(p["n_val"]),
        iterations=int(p["iterations"]),
    )


def enumerate_scenarios(grid) -> list:
    """Cartesian product of a grid (or union of several grids), in a fixed order.

    Each grid maps every key in ``GRID_KEYS`` to a value or list of values.
    Duplicate scenarios across grids are kept once.
    """
    grids = [grid] if isinstance(grid, dict) else list(grid)
    out, seen = [], set()
    for g in grids:
        unknown = sorted(set(g) - set(GRID_KEYS))
        absent = [k for k in GRID_KEYS if k not in g]
        if unknown or absent:
            raise ValueError(f"grid keys: unknown {unknown}, missing {absent}; valid keys are {list(GRID_KEYS)}")
        for combo in itertools.product(*(_as_list(g[k]) for k in GRID_KEYS)):
            cfg = scenario_from_params(dict(zip(GRID_KEYS, combo)))
            if cfg.scenario_id not in seen:
                seen.add(cfg.scenario_id)
                out.append(cfg)
    return out


def x1_type_label(cfg: ScenarioConfig) -> str:
    return "categorical" if cfg.x1_kind == BINARY else "continuous"


@dataclass(frozen=True)
class CellResult:
    """One (iteration, development method, validation handling) outcome."""

    scenario_id: str
    iteration: int
    dev_method: str
    handling: Handling
    metrics: dict = field(default_factory=dict)  # metric -> value; empty when failed
    status: str = "ok"
    context: tuple = ()  # scenario columns for results.csv
    n_rows: int = 0
    k_imputations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def scenario_context(cfg: ScenarioConfig) -> tuple:
    return (
        x1_type_label(cfg), cfg.rho, cfg.gamma1, cfg.gamma3, cfg.target_missing,
        *cfg.beta_dev, *cfg.beta_val, cfg.dag_dev, cfg.dag_val,
    )


def _failure(exc) -> str:
    return f"failed: {type(exc).__name__}: {exc}"


def _score(bundle, completed, ds):
    if completed is None:
        probs = bundle.model_.predict(ds)[:, None]
        y = ds.outcome()
    else:
        probs = score_completed(bundle, completed).probabilities
        y = completed.datasets[0].outcome()
    return evaluate(probs, y)


def validate_bundles(bundles: dict, val_ds, seed: SeedSpec, full_val=None, scenario_id="", iteration=0,
                     context=(), methods=None):
    """Score every developed bundle under each admitted handling.

    ``bundles`` maps development method to a fitted model or to the
    exception raised while developing it. Handlings that do not depend on
    the bundle (complete cases, refit imputations, the fully observed copy)
    are computed once and shared.
    """
    methods = list(bundles) if methods is None else methods
    shared = {}

    def shared_completion(h):
        if h not in shared:
            try:
                if h.method == "fully_observed":
                    if full_val is None:
                        raise MissCompatError("no fully observed validation copy")
                    shared[h] = CompletedData((full_val,), None, full_val.mask.copy())
                else:
                    probe = next(b for b in bundles.values() if not isinstance(b, Exception))
                    shared[h] = resolve_handling(probe, val_ds, h, derive_stream(seed.child("validate", h.label)))
            except (MissCompatError, StopIteration) as exc:
                shared[h] = exc
        return shared[h]

    cells = []
    for method in methods:
        bundle = bundles[method]
        for h in admitted_handlings(method):
            if full_val is None and h.method == "fully_observed":
                continue
            common = dict(scenario_id=scenario_id, iteration=iteration, dev_method=method, handling=h, context=context)
            if isinstance(bundle, Exception):
                cells.append(CellResult(status=_failure(bundle), **common))
                continue
            try:
                if h.method in ("fully_observed", "cca") or h.mode == REFIT:
                    completed = shared_completion(h)
                    if isinstance(completed, Exception):
                        raise completed
                else:
                    stream = derive_stream(seed.child("validate", method, h.label))
                    completed = resolve_handling(bundle, val_ds, h, stream)
                report = _score(bundle, completed, val_ds)
            except MissCompatError as exc:
                cells.append(CellResult(status=_failure(exc), **common))
                continue
            cells.append(CellResult(
                metrics={m: report.metric(m) for m in METRICS},
                n_rows=report.n_rows, k_imputations=report.k_imputations, **common,
            ))
    return cells


def develop_all(dev_ds, seed: SeedSpec, methods=DEV_METHODS, full_dev=None, **options) -> dict:
    bundles = {}
    for method in methods:
        data = full_dev if (method == "fully_observed" and full_dev is not None) else dev_ds
        try:
            bundles[method] = develop_cpm(data, method, derive_stream(seed.child("develop", method)), **options)
        except MissCompatError as exc:
            bundles[method] = exc
    return bundles


def run_iteration(cfg: ScenarioConfig, iteration: int, root_seed: int, methods=DEV_METHODS) -> list:
    seed = SeedSpec(root_seed, (cfg.scenario_id, f"iteration-{iteration}"))
    dev, val = generate_cohorts(cfg, seed)
    bundles = develop_all(dev.masked_data, seed, methods, full_dev=dev.full_data)
    return validate_bundles(
        bundles, val.masked_data, seed, full_val=val.full_data, scenario_id=cfg.scenario_id,
        iteration=iteration, context=scenario_context(cfg), methods=list(methods),
    )


def _run_task(args):
    cfg, iteration, root_seed, methods = args
    return run_iteration(cfg, iteration, root_seed, methods)


def run_scenario(cfg: ScenarioConfig, root_seed: int, workers: int = 1, methods=DEV_METHODS, executor=None,
                 iterations=None) -> list:
    n_iter = cfg.iterations if iterations is None else iterations
    tasks = [(cfg, i, root_seed, tuple(methods)) for i in range(n_iter)]
    if executor is not None:
        chunks = executor.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * max(workers, 1))))
    elif workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        chunks = map(_run_task, tasks)
    return [c for chunk in chunks for c in chunk]


def matched_handling(estimand: str, dev_method: str, available) -> Handling | None:
    """Validation handling that defines ``estimand`` for a model; None if not applicable."""
    if estimand == E_ALL:
        return Handling("fully_observed")
    if estimand == E_MEAN:
        return Handling("mean_mode", TRANSPORTED)
    if estimand == E_RI:
        transported = Handling("regression", TRANSPORTED)
        return transported if transported in available else Handling("regression", REFIT)
    if estimand == E_MI:
        return Handling("mi_no_y", REFIT)
    if estimand == E_PSM:
        return Handling("psm") if dev_method == "psm" else None
    raise ValueError(f"unknown estimand {estimand!r}; expected one of {ESTIMANDS}")


@dataclass(frozen=True)
class BiasRow:
    scenario_id: str
    estimand: str
    dev_method: str
    handling: Handling
    metric: str
    mean_bias: float
    mc_se: float
    n_ok: int
    n_failed: int


def _group(cells):
    groups = OrderedDict()
    for c in cells:
        by_iter = groups.setdefault((c.scenario_id, c.dev_method), OrderedDict())
        by_iter.setdefault(c.iteration, OrderedDict())[c.handling] = c
    return groups


def _mean_se(values):
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else float("nan")
    return mean, se


def compute_bias(cells, estimand: str) -> list:
    """Mean bias (matched minus handling) with Monte Carlo SE, per scenario and model."""
    rows = []
    for (sid, dev), by_iter in _group(cells).items():
        handlings = list(OrderedDict.fromkeys(h for per in by_iter.values() for h in per))
        ref_h = matched_handling(estimand, dev, handlings)
        if ref_h is None:
            continue
        for it, per in by_iter.items():
            if ref_h not in per:
                raise BiasError(
                    f"{estimand}: estimand-matched cell {ref_h.label} missing for scenario {sid}, "
                    f"development method {dev}, iteration {it}"
                )
        for h in handlings:
            for metric in METRICS:
                diffs, failed = [], 0
                for per in by_iter.values():
                    ref, cell = per[ref_h], per.get(h)
                    if cell is None:
                        continue
                    if not (ref.ok and cell.ok):
                        failed += 1
                        continue
                    diffs.append(ref.metrics[metric] - cell.metrics[metric])
                mean, se = _mean_se(diffs)
                rows.append(BiasRow(sid, estimand, dev, h, metric, mean, se, len(diffs), failed))
    return rows


@dataclass(frozen=True)
class DegradationRow:
    scenario_id: str
    estimand: str
    dev_method: str
    metric: str
    mean_value: float
    mean_difference: float  # dev_method minus reference method, both under the matched handling
    mc_se: float
    n_ok: int


def compute_degradation(cells, estimand: str, reference: str = "fully_observed") -> list:
    """Performance of each model under the estimand's handling, relative to ``reference``."""
    groups = _group(cells)
    rows = []
    scenarios = list(OrderedDict.fromkeys(sid for sid, _ in groups))
    for sid in scenarios:
        if (sid, reference) not in groups:
            raise BiasError(f"reference method {reference!r} absent for scenario {sid}")
        ref_iters = groups[(sid, reference)]
        ref_h = matched_handling(estimand, reference, [h for per in ref_iters.values() for h in per])
        for (s, dev), by_iter in groups.items():
            if s != sid:
                continue
            h = matched_handling(estimand, dev, [x for per in by_iter.values() for x in per])
            if h is None or ref_h is None:
                continue
            for metric in METRICS:
                values, diffs = [], []
                for it, per in by_iter.items():
                    cell, ref = per.get(h), ref_iters.get(it, {}).get(ref_h)
                    if cell is None or ref is None or not (cell.ok and ref.ok):
                        continue
                    values.append(cell.metrics[metric])
                    diffs.append(cell.metrics[metric] - ref.metrics[metric])
                mean_v, _ = _mean_se(values)
                mean_d, se = _mean_se(diffs)
                rows.append(DegradationRow(sid, estimand, dev, metric, mean_v, mean_d, se, len(diffs)))
    return rows
