"""Input coercion for the estimator classes.

Estimators accept either a :class:`Dataset` (outcome column included) or an
array-like / DataFrame with NaN for missing cells plus an optional ``y``.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError, SchemaError
from .tabular import BINARY, CONTINUOUS, OUTCOME, PREDICTOR, ColumnSpec, Dataset

OUTCOME_NAME = "Y"


def _infer_kind(col):
    obs = col[~np.isnan(col)]
    return BINARY if obs.size and np.isin(obs, (0.0, 1.0)).all() else CONTINUOUS


def as_dataset(X, y=None, names=None) -> Dataset:
    if isinstance(X, Dataset):
        if y is not None:
            raise ValueError("pass y only with array input; a Dataset carries its own outcome")
        return X
    if hasattr(X, "columns") and names is None:
        names = [str(c) for c in X.columns]
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    if names is None:
        names = [f"X{j + 1}" for j in range(arr.shape[1])]
    if len(names) != arr.shape[1]:
        raise SchemaError(f"{len(names)} names for {arr.shape[1]} columns")
    specs = [ColumnSpec(n, _infer_kind(arr[:, j]), PREDICTOR) for j, n in enumerate(names)]
    values = arr
    if y is not None:
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != arr.shape[0]:
            raise ValueError(f"y has {y.shape[0]} rows, X has {arr.shape[0]}")
        if OUTCOME_NAME in names:
            raise SchemaError(f"predictor name {OUTCOME_NAME!r} clashes with the outcome column")
        specs.append(ColumnSpec(OUTCOME_NAME, BINARY, OUTCOME))
        values = np.column_stack([arr, y])
    mask = ~np.isnan(values)
    return Dataset(specs, np.where(mask, values, 0.0), mask)


def check_predictors(ds: Dataset, names, kinds=None, what="model"):
    """Raise ContractError unless ``ds`` has exactly the expected predictors."""
    have = ds.predictor_names
    if tuple(have) != tuple(names):
        raise ContractError(f"{what} expects predictors {list(names)}, data has {list(have)}")
    if kinds is not None:
        for name, kind in zip(names, kinds):
            if ds.spec(name).kind != kind:
                raise ContractError(f"{what}: predictor {name!r} is {ds.spec(name).kind}, expected {kind}")


def check_outcome(ds: Dataset, what="operation") -> np.ndarray:
    name = ds.outcome_name
    if name is None:
        raise ContractError(f"{what} needs an outcome column")
    if not ds.observed(name).all():
        raise ContractError(f"{what} needs the outcome {name!r} fully observed")
    return ds.values[:, ds.index(name)]
