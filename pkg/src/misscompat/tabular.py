"""Column-typed tabular data with an explicit observed-cell mask.

Missing cells are tracked by ``Dataset.mask`` (True = observed). The value
stored under a masked cell is arbitrary and must never be read; every helper
in this package goes through the mask.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ParseError, SchemaError, SummaryError

CONTINUOUS = "continuous"
BINARY = "binary"
KINDS = (CONTINUOUS, BINARY)

PREDICTOR = "predictor"
OUTCOME = "outcome"
LATENT = "latent"
AUXILIARY = "auxiliary"
ROLES = (PREDICTOR, OUTCOME, LATENT, AUXILIARY)


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str = CONTINUOUS
    role: str = PREDICTOR

    def __post_init__(self):
        if not self.name:
            raise SchemaError("column name must be non-empty")
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")


@dataclass(frozen=True)
class ColumnSummary:
    """Mean (continuous) or mode (binary) of the observed cells of a column."""

    name: str
    kind: str
    value: float
    n_observed: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of numeric values with an observed-cell mask.

    Parameters
    ----------
    columns : sequence of ColumnSpec
    values : array of shape (n_rows, n_cols)
    mask : bool array of the same shape, True where the cell is observed
    row_ids : provenance indices of the rows in their source dataset
    """

    columns: tuple
    values: np.ndarray
    mask: np.ndarray
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        columns = tuple(self.columns)
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {names}")
        values = np.array(self.values, dtype=float, copy=True).reshape(-1, len(columns))
        mask = np.array(self.mask, dtype=bool, copy=True).reshape(-1, len(columns))
        if values.shape != mask.shape:
            raise SchemaError(f"values shape {values.shape} != mask shape {mask.shape}")
        if self.row_ids is None:
            row_ids = np.arange(values.shape[0])
        else:
            row_ids = np.array(self.row_ids, dtype=np.int64, copy=True)
            if row_ids.shape != (values.shape[0],):
                raise SchemaError("row_ids length must equal the number of rows")
        for arr in (values, mask, row_ids):
            arr.flags.writeable = False
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "row_ids", row_ids)

    def __len__(self):
        return self.values.shape[0]

    def __repr__(self):
        missing = int((~self.mask).sum())
        return f"Dataset(n_rows={self.n_rows}, columns={list(self.names)}, missing_cells={missing})"

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> tuple:
        return tuple(c.name for c in self.columns)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"no column named {name!r}; have {list(self.names)}") from None

    def spec(self, name: str) -> ColumnSpec:
        return self.columns[self.index(name)]

    @property
    def predictor_names(self) -> tuple:
        return tuple(c.name for c in self.columns if c.role == PREDICTOR)

    @property
    def predictor_index(self) -> np.ndarray:
        return np.array([i for i, c in enumerate(self.columns) if c.role == PREDICTOR], dtype=int)

    @property
    def outcome_name(self):
        outcomes = [c.name for c in self.columns if c.role == OUTCOME]
        if len(outcomes) > 1:
            raise SchemaError(f"more than one outcome column: {outcomes}")
        return outcomes[0] if outcomes else None

    def outcome(self) -> np.ndarray:
        """Outcome vector; raises unless the outcome column is fully observed."""
        name = self.outcome_name
        if name is None:
            raise SchemaError("dataset has no outcome column")
        j = self.index(name)
        if not self.mask[:, j].all():
            raise SchemaError(f"outcome column {name!r} has missing values")
        return self.values[:, j]

    def column(self, name: str) -> np.ndarray:
        """Values of a fully observed column."""
        j = self.index(name)
        if not self.mask[:, j].all():
            raise SchemaError(f"column {name!r} has missing values")
        return self.values[:, j]

    def observed(self, name: str) -> np.ndarray:
        return self.mask[:, self.index(name)]

    def predictor_mask(self) -> np.ndarray:
        return self.mask[:, self.predictor_index]

    def predictor_matrix(self) -> np.ndarray:
        """Predictor values; raises if any predictor cell is masked."""
        idx = self.predictor_index
        if not self.mask[:, idx].all():
            raise SchemaError("predictor matrix requested but predictor cells are missing")
        return self.values[:, idx]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.columns, self.values[rows], self.mask[rows], self.row_ids[rows])

    def replace(self, values=None, mask=None, columns=None) -> "Dataset":
        return Dataset(
            self.columns if columns is None else columns,
            self.values if values is None else values,
            self.mask if mask is None else mask,
            self.row_ids,
        )

    def select(self, names: Sequence[str]) -> "Dataset":
        idx = [self.index(n) for n in names]
        return Dataset([self.columns[i] for i in idx], self.values[:, idx], self.mask[:, idx], self.row_ids)


def from_arrays(columns: Sequence[ColumnSpec], values) -> Dataset:
    """Build a Dataset from a float array where NaN marks a missing cell."""
    values = np.asarray(values, dtype=float)
    mask = ~np.isnan(values)
    return Dataset(columns, np.where(mask, values, 0.0), mask)


def pattern_of(ds: Dataset, row: int) -> tuple:
    """Observed (1) / missing (0) flags of the predictors in one row."""
    if not -ds.n_rows <= row < ds.n_rows:
        raise IndexError(f"row {row} out of range for {ds.n_rows} rows")
    return tuple(int(b) for b in ds.predictor_mask()[row])


def patterns(ds: Dataset) -> np.ndarray:
    """Predictor-mask rows, one per data row, as an (n, P) bool array."""
    return ds.predictor_mask()


def complete_case_filter(ds: Dataset) -> Dataset:
    keep = np.flatnonzero(ds.predictor_mask().all(axis=1))
    return ds.subset(keep)


def column_summaries(ds: Dataset, names: Iterable[str] | None = None) -> dict:
    """Observed-cell mean or mode per column.

    Binary ties resolve to 0.
    """
    names = ds.predictor_names if names is None else tuple(names)
    out = {}
    for name in names:
        spec = ds.spec(name)
        obs = ds.values[ds.observed(name), ds.index(name)]
        if obs.size == 0:
            raise SummaryError(f"column {name!r} has no observed values")
        if spec.kind == BINARY:
            value = 1.0 if (obs == 1).sum() > (obs == 0).sum() else 0.0
        else:
            value = float(obs.mean())
        out[name] = ColumnSummary(name, spec.kind, value, int(obs.size))
    return out


def random_split(ds: Dataset, n_first: int, rng: np.random.Generator):
    if n_first < 0 or n_first > ds.n_rows:
        raise ValueError(f"n_first={n_first} outside [0, {ds.n_rows}]")
    perm = rng.permutation(ds.n_rows)
    return ds.subset(np.sort(perm[:n_first])), ds.subset(np.sort(perm[n_first:]))


def _format(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def save_csv(ds: Dataset, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(ds.names)
            for vals, obs in zip(ds.values, ds.mask):
                writer.writerow([_format(v) if o else "" for v, o in zip(vals, obs)])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_header(path) -> list:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return next(csv.reader(fh), [])


def load_csv(path, specs: Sequence[ColumnSpec]) -> Dataset:
    """Read a CSV written with empty fields for missing cells.

    Columns are returned in the order of ``specs``; the header must contain
    exactly those names (in any order).
    """
    path = Path(path)
    specs = tuple(specs)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, expected a header row")
        header = [h.strip() for h in header]
        wanted = [s.name for s in specs]
        absent = [n for n in wanted if n not in header]
        extra = [h for h in header if h not in wanted]
        if absent or extra:
            raise SchemaError(f"{path}: header mismatch; missing columns {absent}, unexpected columns {extra}")
        order = [header.index(n) for n in wanted]
        rows, masks = [], []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise ParseError(f"{path}: line {lineno} has {len(record)} fields, expected {len(header)}")
            vals, obs = [], []
            for j, name in zip(order, wanted):
                cell = record[j].strip()
                if cell == "":
                    vals.append(0.0)
                    obs.append(False)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"{path}: line {lineno}, column {name!r}: cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: line {lineno}, column {name!r}: non-finite value {cell!r}")
                vals.append(v)
                obs.append(True)
            rows.append(vals)
            masks.append(obs)
    values = np.array(rows, dtype=float).reshape(-1, len(specs))
    mask = np.array(masks, dtype=bool).reshape(-1, len(specs))
    for j, spec in enumerate(specs):
        if spec.role == OUTCOME and not mask[:, j].all():
            first = int(np.flatnonzero(~mask[:, j])[0]) + 2
            raise SchemaError(f"{path}: outcome {spec.name!r} is missing (first at line {first})")
        if spec.kind == BINARY and not np.isin(values[mask[:, j], j], (0.0, 1.0)).all():
            raise ParseError(f"{path}: binary column {spec.name!r} has values other than 0/1")
    return Dataset(specs, values, mask)


def infer_specs(path, outcome: str | None = None, predictors: Sequence[str] | None = None,
                binary: Sequence[str] | None = None) -> list:
    """Guess column specs from a CSV.

    Columns whose observed values are all 0/1 are binary unless ``binary`` is
    given explicitly. Columns not listed as predictors (when ``predictors`` is
    given) and not the outcome become auxiliary.
    """
    header = [h.strip() for h in read_header(path)]
    if outcome is not None and outcome not in header:
        raise SchemaError(f"{path}: outcome column {outcome!r} not in header {header}")
    if predictors is not None:
        absent = [p for p in predictors if p not in header]
        if absent:
            raise SchemaError(f"{path}: predictor columns {absent} not in header {header}")
    loose = load_csv(path, [ColumnSpec(h, CONTINUOUS, AUXILIARY) for h in header])
    specs = []
    for j, name in enumerate(header):
        if binary is not None:
            kind = BINARY if name in binary else CONTINUOUS
        else:
            obs = loose.values[loose.mask[:, j], j]
            kind = BINARY if obs.size and np.isin(obs, (0.0, 1.0)).all() else CONTINUOUS
        if name == outcome:
            role = OUTCOME
        elif predictors is None or name in predictors:
            role = PREDICTOR
        else:
            role = AUXILIARY
        specs.append(ColumnSpec(name, kind, role))
    if predictors is not None:
        by_name = {s.name: s for s in specs}
        specs = [by_name[p] for p in predictors] + [s for s in specs if s.name not in predictors]
    return specs
