"""Result files: long-format cell results, bias tables, run metadata and SVG heatmaps."""

from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
import scipy
import sklearn

from . import __version__
from .compat import ESTIMANDS, BiasRow, CellResult, compute_bias
from .cpm import DEV_METHODS, NONE, REFIT, TRANSPORTED, Handling
from .exceptions import ArgumentError, ParseError
from .metrics import METRICS

RESULTS_COLUMNS = (
    "scenario_id", "iteration", "x1_kind", "rho", "gamma1", "gamma3", "miss_prop",
    "b1_dev", "b2_dev", "b3_dev", "b1_val", "b2_val", "b3_val", "dag_dev", "dag_val",
    "dev_method", "val_method", "val_mode", "metric", "value", "status",
)
BIAS_COLUMNS = (
    "scenario_id", "estimand", "dev_method", "val_method", "val_mode", "metric",
    "mean_bias", "mc_se", "n_ok", "n_failed",
)
_N_CONTEXT = 13

ALL_HANDLINGS = (
    Handling("fully_observed", NONE),
    Handling("cca", NONE),
    Handling("mean_mode", TRANSPORTED),
    Handling("regression", TRANSPORTED),
    Handling("regression", REFIT),
    Handling("mi_no_y", TRANSPORTED),
    Handling("mi_no_y", REFIT),
    Handling("mi_with_y", TRANSPORTED),
    Handling("mi_with_y", REFIT),
    Handling("psm", TRANSPORTED),
)

# flags describing choices the outputs depend on
DECISION_FLAGS = {
    "bias_sign": "estimand_minus_handling",
    "metric_pooling": "average_over_imputations",
    "calibration_intercept": "offset_slope_fixed_at_1",
    "e_ri_reference": "regression_transported_if_available_else_refit",
    "e_all_reference": "fully_observed_validation_copy",
    "binary_regression_fill": "fitted_probability",
    "psm_fallback": "intercept_only_below_min_rows_or_min_events",
    "mi_m": 5,
    "mi_cycles": 10,
}


def fmt(value) -> str:
    """Deterministic text for a CSV cell: ints bare, floats by shortest repr."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(value)


def cell_rows(cell: CellResult):
    context = [fmt(v) for v in cell.context] or [""] * _N_CONTEXT
    head = [cell.scenario_id, str(cell.iteration), *context, cell.dev_method, cell.handling.method, cell.handling.mode]
    for metric in METRICS:
        value = fmt(cell.metrics[metric]) if cell.ok else ""
        yield [*head, metric, value, cell.status]


def bias_rows(rows):
    for r in rows:
        yield [r.scenario_id, r.estimand, r.dev_method, r.handling.method, r.handling.mode, r.metric,
               fmt(r.mean_bias), fmt(r.mc_se), str(r.n_ok), str(r.n_failed)]


class ResultsWriter:
    """Streams cell results to ``results.csv`` one scenario at a time."""

    def __init__(self, path, root_seed: int):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._fh.write(f"# root_seed={int(root_seed)}\n")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(RESULTS_COLUMNS)
        self.n_cells = 0
        self.n_failed = 0

    def write(self, cells):
        for c in cells:
            self.n_cells += 1
            self.n_failed += not c.ok
            self._w.writerows(cell_rows(c))

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_bias_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BIAS_COLUMNS)
        w.writerows(bias_rows(rows))


def run_metadata(root_seed: int, config: dict, **extra) -> dict:
    return {
        "root_seed": int(root_seed),
        "config": config,
        "decisions": DECISION_FLAGS,
        "versions": {
            "misscompat": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
        },
        **extra,
    }


def write_metadata(meta: dict, path) -> None:
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def aggregate_and_emit(cells, out_dir, root_seed: int, config=None, estimands=ESTIMANDS, bias=None) -> dict:
    """Write results.csv, one bias CSV per estimand and run_metadata.json.

    ``bias`` may supply precomputed rows per estimand; otherwise they are
    computed from ``cells``. Returns the bias rows keyed by estimand.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = list(cells)
    with ResultsWriter(out / "results.csv", root_seed) as w:
        w.write(cells)
    tables = {}
    for est in estimands:
        rows = bias[est] if bias is not None else compute_bias(cells, est)
        write_bias_csv(rows, out / f"bias_{est}.csv")
        tables[est] = rows
    meta = run_metadata(root_seed, config or {}, n_cells=len(cells), n_failed=sum(not c.ok for c in cells))
    write_metadata(meta, out / "run_metadata.json")
    return tables


def _data_lines(fh):
    for line in fh:
        if not line.startswith("#"):
            yield line


def _num(text):
    return float(text) if text not in ("",) else float("nan")


def read_results(path) -> list:
    """Rebuild CellResults from a results.csv."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(_data_lines(fh))
        header = next(reader, None)
        if header is None or tuple(header) != RESULTS_COLUMNS:
            raise ParseError(f"{path}: header does not match the results schema {list(RESULTS_COLUMNS)}")
        cells, current, key = [], {}, None
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RESULTS_COLUMNS):
                raise ParseError(f"{path}: line {lineno} has {len(row)} fields, expected {len(RESULTS_COLUMNS)}")
            k = tuple(row[:18])
            if k != key:
                if key is not None:
                    cells.append(_cell_from(key, current))
                key, current = k, {"metrics": {}, "status": row[20]}
            if row[20] == "ok":
                current["metrics"][row[18]] = float(row[19])
        if key is not None:
            cells.append(_cell_from(key, current))
    return cells


def _cell_from(key, acc):
    ctx_raw = key[2:2 + _N_CONTEXT]
    context = (
        ctx_raw[0], *(_num(v) for v in ctx_raw[1:11]), ctx_raw[11], ctx_raw[12],
    ) if any(ctx_raw) else ()
    ok = acc["status"] == "ok"
    return CellResult(
        scenario_id=key[0], iteration=int(key[1]), dev_method=key[15], handling=Handling(key[16], key[17]),
        metrics=acc["metrics"] if ok else {}, status=acc["status"], context=context,
    )


def read_bias(path) -> list:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(_data_lines(fh))
        if reader.fieldnames is None or tuple(reader.fieldnames) != BIAS_COLUMNS:
            raise ParseError(f"{path}: header does not match the bias schema {list(BIAS_COLUMNS)}")
        for r in reader:
            rows.append(BiasRow(
                r["scenario_id"], r["estimand"], r["dev_method"], Handling(r["val_method"], r["val_mode"]),
                r["metric"], _num(r["mean_bias"]), _num(r["mc_se"]), int(r["n_ok"]), int(r["n_failed"]),
            ))
    return rows


# --- heatmaps -------------------------------------------------------------

_NEG = (33, 102, 172)  # blue: handling overestimates the estimand
_MID = (247, 247, 247)
_POS = (178, 24, 43)  # red: handling underestimates the estimand
_MISSING = "#d9d9d9"


def diverging_color(value: float, scale: float) -> str:
    """Hex colour on a blue-white-red scale; 0 maps to the neutral centre."""
    if not np.isfinite(value):
        return _MISSING
    t = 0.0 if scale <= 0 else max(-1.0, min(1.0, value / scale))
    end = _POS if t > 0 else _NEG
    a = abs(t)
    rgb = [round(m + (e - m) * a) for m, e in zip(_MID, end)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _annotation(mean, se):
    if not np.isfinite(mean):
        return "n/a"
    if not np.isfinite(se):
        return f"{mean:.3f}"
    return f"{mean:.3f} ± {se:.3f}"


def _heatmap_group(rows, metric, x0, y0, title):
    devs = [d for d in DEV_METHODS if any(r.dev_method == d for r in rows)]
    devs += sorted({r.dev_method for r in rows} - set(devs))
    hands = [h for h in ALL_HANDLINGS if any(r.handling == h for r in rows)]
    hands += sorted({r.handling for r in rows} - set(hands))
    table = {(r.dev_method, r.handling): r for r in rows}
    finite = [abs(r.mean_bias) for r in rows if np.isfinite(r.mean_bias)]
    scale = max(finite) if finite else 0.0

    cw, ch, left, top = 118, 30, 120, 150
    parts = [f'<g transform="translate({x0},{y0})">',
             f'<text x="0" y="16" font-size="14" font-weight="bold">{escape(title)}</text>']
    for j, h in enumerate(hands):
        cx = left + j * cw + cw / 2
        parts.append(f'<text x="{cx:.1f}" y="{top - 8}" font-size="11" text-anchor="start" '
                     f'transform="rotate(-40 {cx:.1f} {top - 8})">{escape(h.label)}</text>')
    for i, d in enumerate(devs):
        y = top + i * ch
        parts.append(f'<text x="{left - 6}" y="{y + ch / 2 + 4:.1f}" font-size="11" text-anchor="end">'
                     f'{escape(d)}</text>')
        for j, h in enumerate(hands):
            x = left + j * cw
            r = table.get((d, h))
            mean = r.mean_bias if r is not None else float("nan")
            se = r.mc_se if r is not None else float("nan")
            fill = diverging_color(mean, scale) if r is not None else _MISSING
            parts.append(f'<rect class="cell" x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}" '
                         f'stroke="#ffffff" data-dev="{escape(d)}" data-handling="{escape(h.label)}"/>')
            if r is not None:
                parts.append(f'<text x="{x + cw / 2:.1f}" y="{y + ch / 2 + 4:.1f}" font-size="10" '
                             f'text-anchor="middle">{escape(_annotation(mean, se))}</text>')
    parts.append(f'<text x="0" y="{top + len(devs) * ch + 20}" font-size="10">'
                 f'{escape(metric)}: colour scale ±{scale:.4g}, 0 at centre</text>')
    parts.append("</g>")
    width = left + len(hands) * cw + 20
    height = top + len(devs) * ch + 30
    return "\n".join(parts), width, height


def _svg(body, width, height):
    return (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
            f'<rect width="100%" height="100%" fill="#ffffff"/>\n{body}\n</svg>\n')


def _select(bias, metric, scenario_id):
    if metric not in METRICS:
        raise ArgumentError(f"unknown metric {metric!r}; expected one of {list(METRICS)}")
    rows = [r for r in bias if r.metric == metric]
    if not rows:
        raise ValueError("bias table is empty")
    sid = rows[0].scenario_id if scenario_id is None else scenario_id
    rows = [r for r in rows if r.scenario_id == sid]
    if not rows:
        raise ValueError(f"no bias rows for scenario {scenario_id!r}")
    return rows, sid


def render_heatmap(bias, metric: str, path, scenario_id=None) -> Path:
    """Development methods by validation handlings, coloured by mean bias.

    Only one scenario is drawn: ``scenario_id`` or the first in the table.
    """
    rows, sid = _select(list(bias), metric, scenario_id)
    est = rows[0].estimand
    body, w, h = _heatmap_group(rows, metric, 10, 10, f"{est} bias in {metric} (scenario {sid})")
    path = Path(path)
    path.write_text(_svg(body, w + 20, h + 20), encoding="utf-8")
    return path


def render_panel(bias, path, scenario_id=None, metrics=METRICS) -> Path:
    """All metrics for one scenario stacked vertically in one SVG."""
    bias = list(bias)
    groups, y, width = [], 10, 0
    for metric in metrics:
        rows, sid = _select(bias, metric, scenario_id)
        scenario_id = sid
        body, w, h = _heatmap_group(rows, metric, 10, y, f"{rows[0].estimand} bias in {metric} (scenario {sid})")
        groups.append(body)
        y += h + 10
        width = max(width, w)
    path = Path(path)
    path.write_text(_svg("\n".join(groups), width + 20, y + 10), encoding="utf-8")
    return path
