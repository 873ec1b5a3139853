"""Command-line interface: ``misscompat <command> [options]``.

Exit status is 0 on success (per-cell failures are reported as warnings),
1 on a hard error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bootstrap import bootstrap_run, load_plan, load_plan_data, summarize
from .compat import ESTIMANDS, GRID_KEYS, PRESETS, compute_bias, enumerate_scenarios, run_scenario
from .cpm import DEV_METHODS, Handling, MissingDataCPM, admitted, load_bundle, predict_bundle, save_bundle
from .exceptions import ArgumentError, ContractError, MissCompatError, ParseError, SchemaError
from .impute import STRATEGIES, Imputer, decode_package, encode_package
from .metrics import METRICS, evaluate
from .report import (
    ResultsWriter,
    read_bias,
    read_results,
    render_panel,
    run_metadata,
    write_bias_csv,
    write_metadata,
)
from .rng import stream
from .tabular import (
    AUXILIARY,
    BINARY,
    CONTINUOUS,
    OUTCOME,
    PREDICTOR,
    ColumnSpec,
    infer_specs,
    load_csv,
    read_header,
    save_csv,
)

_GRID_DEFAULTS = {"n_dev": "5000", "n_val": "5000", "iterations": "200"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _log(msg):
    print(msg, file=sys.stderr)


# --- grid files -------------------------------------------------------------

def _parse_value(key, text):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ParseError(f"grid key {key!r} has no values")
    if key == "x1_type":
        return items
    try:
        return [int(t) if key in ("n_dev", "n_val", "iterations") else float(t) for t in items]
    except ValueError:
        raise ParseError(f"grid key {key!r}: cannot parse {text!r} as numbers") from None


def parse_grid(text: str) -> list:
    """Sub-grids from an INI text; each section is one Cartesian product.

    Keys without a section header belong to a single implicit grid. Unset
    ``n_dev``, ``n_val`` and ``iterations`` take desk-scale defaults.
    """
    cp = configparser.ConfigParser(interpolation=None)
    body = text if text.lstrip().startswith("[") else "[grid]\n" + text
    try:
        cp.read_string(body)
    except configparser.Error as exc:
        raise ParseError(f"grid file: {exc}") from exc
    grids = []
    for name in cp.sections():
        sec = cp[name]
        unknown = sorted(set(sec) - set(GRID_KEYS))
        if unknown:
            raise ArgumentError(f"grid section [{name}]: unknown keys {unknown}; valid keys are {list(GRID_KEYS)}")
        raw = {**_GRID_DEFAULTS, **dict(sec)}
        absent = [k for k in GRID_KEYS if k not in raw]
        if absent:
            raise ArgumentError(f"grid section [{name}]: missing keys {absent}; valid keys are {list(GRID_KEYS)}")
        grids.append({k: _parse_value(k, raw[k]) for k in GRID_KEYS})
    if not grids:
        raise ArgumentError("grid file defines no sections")
    return grids


def parse_selection(text: str, n: int) -> list:
    """Indices from ``"0,5,9"`` or slices like ``"0:3072:384"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ":" in part:
                out.extend(range(n)[slice(*(int(p) if p else None for p in part.split(":")))])
            else:
                i = int(part)
                if not 0 <= i < n:
                    raise ArgumentError(f"scenario index {i} outside [0, {n})")
                out.append(i)
        except ValueError as exc:
            if isinstance(exc, ArgumentError):
                raise
            raise ArgumentError(f"bad scenario selection {part!r}") from None
    return list(dict.fromkeys(out))


def _override(cfg, iterations, n):
    changes = {}
    if iterations is not None:
        changes["iterations"] = iterations
    if n is not None:
        changes["n_dev"] = changes["n_val"] = n
    return replace(cfg, **changes) if changes else cfg


# --- commands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.grid:
        grids = parse_grid(Path(args.grid).read_text(encoding="utf-8"))
        source = {"grid_file": str(args.grid), "grids": grids}
    else:
        grids = PRESETS[args.preset]
        source = {"preset": args.preset}
    scenarios = enumerate_scenarios(grids)
    n_all = len(scenarios)
    if args.scenarios:
        scenarios = [scenarios[i] for i in parse_selection(args.scenarios, n_all)]
    scenarios = [_override(c, args.iterations, args.n) for c in scenarios]
    if args.dry_run:
        print(f"{len(scenarios)} scenarios" + (f" (of {n_all})" if len(scenarios) != n_all else ""))
        return 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {
        "command": "simulate", **source, "scenarios": args.scenarios, "iterations": args.iterations,
        "n": args.n, "n_scenarios": len(scenarios), "workers": args.workers,
    }
    bias = {e: [] for e in ESTIMANDS}
    executor = ProcessPoolExecutor(args.workers) if args.workers > 1 else None
    try:
        with ResultsWriter(out / "results.csv", args.seed) as writer:
            for k, cfg in enumerate(scenarios):
                cells = run_scenario(cfg, args.seed, args.workers, executor=executor)
                writer.write(cells)
                for est in ESTIMANDS:
                    bias[est].extend(compute_bias(cells, est))
                if args.verbose:
                    _log(f"scenario {k + 1}/{len(scenarios)} {cfg.scenario_id}: {len(cells)} cells")
            n_cells, n_failed = writer.n_cells, writer.n_failed
    finally:
        if executor is not None:
            executor.shutdown()
    for est in ESTIMANDS:
        write_bias_csv(bias[est], out / f"bias_{est}.csv")
    meta = run_metadata(args.seed, config, n_cells=n_cells, n_failed=n_failed,
                        scenario_ids=[c.scenario_id for c in scenarios])
    write_metadata(meta, out / "run_metadata.json")
    if n_failed:
        _log(f"warning: {n_failed} of {n_cells} cells failed; see the status column of results.csv")
    print(f"{len(scenarios)} scenarios, {n_cells} cells written to {out}")
    return 0


def cmd_bootstrap(args) -> int:
    plan = load_plan(args.plan, args.seed)
    header = [h.strip() for h in read_header(args.data)]
    absent = [n for n in (*plan.predictor_names, plan.outcome) if n not in header]
    if absent:
        raise SchemaError(f"{args.data}: plan columns {absent} not in header {header}")
    if args.dry_run:
        print(f"{plan.b} replicates, {len(plan.dev_methods)} development methods, estimands {list(plan.estimands)}")
        return 0
    ds = load_plan_data(args.data, plan)
    progress = (lambda r: _log(f"replicate {r + 1}/{plan.b}")) if args.verbose else None
    result = bootstrap_run(ds, plan, args.workers, progress)
    summarize(result, args.out)
    n_failed = sum(not c.ok for c in result.cells)
    if result.failed_replicates:
        _log(f"warning: replicates {result.failed_replicates} failed entirely")
    if n_failed:
        _log(f"warning: {n_failed} of {len(result.cells)} cells failed")
    print(f"{plan.b} replicates written to {args.out}")
    return 0


def _load_model_data(path, outcome, predictors, binary, need_outcome=True):
    header = [h.strip() for h in read_header(path)]
    preds = [p.strip() for p in predictors.split(",")] if predictors else [h for h in header if h != outcome]
    if need_outcome and outcome not in header:
        raise ContractError(f"{path}: outcome column {outcome!r} not found")
    has_y = outcome in header
    specs = infer_specs(path, outcome if has_y else None, preds, binary.split(",") if binary else None)
    ds = load_csv(path, specs)
    keep = preds + ([outcome] if has_y else [])
    return ds.select(keep)


def cmd_develop(args) -> int:
    if args.dry_run:
        print(f"would develop a {args.method} model on {args.data}")
        return 0
    ds = _load_model_data(args.data, args.outcome, args.predictors, args.binary)
    bundle = MissingDataCPM(args.method, m=args.m, n_cycles=args.cycles).fit(ds, rng=stream(args.seed, "develop", args.method))
    out = Path(args.out)
    save_bundle(bundle, out)
    write_metadata(run_metadata(args.seed, _echo(args)), out.with_suffix(".meta.json"))
    coef = ", ".join(f"{n}={v:.4f}" for n, v in zip(("intercept", *bundle.predictors_), bundle.coefficients_))
    print(f"{args.method} model: {coef}")
    return 0


def _bundle_data(bundle, path, handling):
    header = [h.strip() for h in read_header(path)]
    absent = [p for p in bundle.predictors_ if p not in header]
    if absent:
        raise ContractError(f"{path}: model predictors {absent} not in header {header}")
    if bundle.outcome_ not in header:
        if handling.method == "mi_with_y":
            raise ContractError(
                f"{path}: {handling.label} imputes with the outcome {bundle.outcome_!r}, which the data lacks"
            )
        raise ContractError(f"{path}: validation needs the outcome column {bundle.outcome_!r}")
    specs = [ColumnSpec(n, k, PREDICTOR) for n, k in zip(bundle.predictors_, bundle.kinds_)]
    specs.append(ColumnSpec(bundle.outcome_, BINARY, OUTCOME))
    aux = [ColumnSpec(h, CONTINUOUS, AUXILIARY) for h in header if h not in {s.name for s in specs}]
    ds = load_csv(path, specs + aux)
    return ds.select([s.name for s in specs])


REPORT_COLUMNS = ("dev_method", "val_method", "val_mode", "admitted", *METRICS,
                  "n_rows", "n_retained", "n_events", "k_imputations")


def cmd_validate(args) -> int:
    bundle = load_bundle(args.bundle)
    handling = Handling.parse(args.handling)
    if not admitted(bundle.method, handling):
        _log(f"warning: ({bundle.method}, {handling.label}) is not an admitted combination; running anyway")
    if args.dry_run:
        print(f"would validate a {bundle.method} model on {args.data} under {handling.label}")
        return 0
    ds = _bundle_data(bundle, args.data, handling)
    pred = predict_bundle(bundle, ds, handling, stream(args.seed, "validate", handling.label))
    y = ds.outcome()[pred.rows]
    report = evaluate(pred.probabilities, y)
    row = {
        "dev_method": bundle.method, "val_method": handling.method, "val_mode": handling.mode,
        "admitted": int(admitted(bundle.method, handling)),
        **{m: report.metric(m) for m in METRICS},
        "n_rows": ds.n_rows, "n_retained": report.n_rows, "n_events": report.n_events,
        "k_imputations": report.k_imputations,
    }
    out = Path(args.out)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    for k in REPORT_COLUMNS:
        v = row[k]
        print(f"{k:>14}: {v:.6f}" if isinstance(v, float) else f"{k:>14}: {v}")
    return 0


def cmd_impute(args) -> int:
    if args.package:
        pkg = decode_package(Path(args.package).read_bytes())
        has_y = pkg.outcome_ is not None
        specs = [ColumnSpec(n, k, PREDICTOR) for n, k in zip(pkg.predictors_, pkg.kinds_)]
        header = [h.strip() for h in read_header(args.data)]
        if has_y and pkg.outcome_ not in header:
            raise ContractError(f"{args.data}: package imputes with the outcome {pkg.outcome_!r}, which the data lacks")
        outcome = pkg.outcome_ if has_y else (args.outcome if args.outcome in header else None)
        if outcome is not None:
            specs.append(ColumnSpec(outcome, BINARY, OUTCOME))
        extra = [ColumnSpec(h, CONTINUOUS, AUXILIARY) for h in header if h not in {s.name for s in specs}]
        ds = load_csv(args.data, specs + extra).select([s.name for s in specs])
    else:
        need_y = args.with_outcome
        ds = _load_model_data(args.data, args.outcome, args.predictors, args.binary, need_outcome=need_y)
        if args.strategy is None:
            raise ArgumentError("impute needs --strategy or --package")
        pkg = Imputer(args.strategy, args.with_outcome, args.m, args.cycles)
    if args.dry_run:
        print(f"would impute {args.data} with a {pkg.strategy} package")
        return 0
    rng = stream(args.seed, "impute")
    if not args.package:
        pkg.fit(ds, rng=rng, provenance={"source": str(args.data)})
    completed = pkg.apply(ds, rng=rng)
    out = Path(args.out)
    paths = []
    if completed.m == 1:
        save_csv(completed.datasets[0], out)
        paths.append(out)
    else:
        for i, d in enumerate(completed.datasets, start=1):
            p = out.with_name(f"{out.stem}_{i}{out.suffix}")
            save_csv(d, p)
            paths.append(p)
    if args.save_package:
        Path(args.save_package).write_bytes(encode_package(pkg))
    print(f"{pkg.strategy}: wrote {', '.join(str(p) for p in paths)}")
    return 0


def cmd_report(args) -> int:
    src = Path(args.results)
    out = Path(args.out) if args.out else (src if src.is_dir() else src.parent)
    if args.dry_run:
        print(f"would render heatmaps from {src} into {out}")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    if src.is_file():
        cells = read_results(src)
        tables = {e: compute_bias(cells, e) for e in ESTIMANDS}
    else:
        tables = {e: read_bias(src / f"bias_{e}.csv") for e in ESTIMANDS if (src / f"bias_{e}.csv").exists()}
    estimands = args.estimand or list(tables)
    written = []
    for est in estimands:
        rows = tables.get(est, [])
        if not rows:
            continue
        sid = args.scenario or rows[0].scenario_id
        metrics = [args.metric] if args.metric else list(METRICS)
        written.append(render_panel(rows, out / f"heatmap_{est}_{sid}.svg", sid, metrics))
    for p in written:
        print(p)
    if not written:
        _log("warning: no bias rows to render")
    return 0


def _echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


# --- parser -----------------------------------------------------------------

def _common(out_default):
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    p.add_argument("--out", default=out_default, help=f"output path (default {out_default})")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="parallel worker processes (default: available cores)")
    p.add_argument("--dry-run", action="store_true", help="validate inputs and report the work, write nothing")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _model_data_args(p):
    p.add_argument("data", help="CSV with empty cells for missing values")
    p.add_argument("--outcome", default="Y", help="outcome column (default Y)")
    p.add_argument("--predictors", help="comma-separated predictor columns (default: all but the outcome)")
    p.add_argument("--binary", help="comma-separated binary columns (default: detect 0/1 columns)")
    p.add_argument("--m", type=int, default=5, help="multiple imputations (default 5)")
    p.add_argument("--cycles", type=int, default=10, help="chained-equation cycles (default 10)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="misscompat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"misscompat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[_common("results")], help="run the simulation grid")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--grid", help="INI grid file; each section is one Cartesian product")
    src.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--scenarios", help="subset of scenario indices, e.g. '0,3' or '0:3072:384'")
    p.add_argument("--iterations", type=int, help="override iterations per scenario")
    p.add_argument("--n", type=int, help="override n_dev and n_val")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bootstrap", parents=[_common("bootstrap")], help="bootstrap audit of a dataset")
    p.add_argument("data", help="CSV dataset")
    p.add_argument("plan", help="plan file (b, outcome, predictors, ...)")
    p.set_defaults(func=cmd_bootstrap, seed=None)

    p = sub.add_parser("develop", parents=[_common("model.json")], help="develop a model bundle")
    _model_data_args(p)
    p.add_argument("--method", required=True, choices=DEV_METHODS)
    p.set_defaults(func=cmd_develop)

    p = sub.add_parser("validate", parents=[_common("report.csv")], help="score a bundle on a dataset")
    p.add_argument("bundle", help="model bundle written by develop")
    p.add_argument("data", help="CSV dataset with the outcome")
    p.add_argument("--handling", required=True, help="method:mode, e.g. mi_with_y:refit")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("impute", parents=[_common("completed.csv")], help="fit or apply an imputation package")
    _model_data_args(p)
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--with-outcome", action="store_true", help="multiple imputation using the outcome")
    p.add_argument("--package", help="apply this saved package instead of fitting one")
    p.add_argument("--save-package", help="write the fitted package here")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("report", parents=[_common("")], help="render bias heatmaps")
    p.add_argument("results", help="results directory (bias CSVs) or a results.csv")
    p.add_argument("--metric", choices=METRICS)
    p.add_argument("--estimand", action="append", choices=ESTIMANDS)
    p.add_argument("--scenario", help="scenario id (default: first in the table)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be at least 1")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except ArgumentError as exc:
        _log(f"misscompat {args.command}: error: {exc}")
        return 2
    except (MissCompatError, OSError, ValueError) as exc:
        _log(f"misscompat {args.command}: error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
