"""Missing-data handling across prediction-model development, validation and deployment."""

__version__ = "0.1.0"

from .cpm import DEV_METHODS, Handling, MissingDataCPM, admitted, admitted_handlings  # noqa: E402
from .datagen import ScenarioConfig, generate_cohorts  # noqa: E402
from .impute import Imputer  # noqa: E402
from .metrics import PerfReport, auc, brier, calibration, evaluate  # noqa: E402
from .tabular import ColumnSpec, Dataset, load_csv, save_csv  # noqa: E402

__all__ = [
    "DEV_METHODS",
    "ColumnSpec",
    "Dataset",
    "Handling",
    "Imputer",
    "MissingDataCPM",
    "PerfReport",
    "ScenarioConfig",
    "__version__",
    "admitted",
    "admitted_handlings",
    "auc",
    "brier",
    "calibration",
    "evaluate",
    "generate_cohorts",
    "load_csv",
    "save_csv",
]
