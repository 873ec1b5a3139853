"""Exception hierarchy shared by every module."""


class MissCompatError(Exception):
    """Base class for all errors raised by misscompat."""


class ParseError(MissCompatError, ValueError):
    """A CSV cell or config value could not be parsed."""


class SchemaError(MissCompatError, ValueError):
    """Columns or roles do not match what the caller declared."""


class SummaryError(MissCompatError, ValueError):
    """A column summary is undefined (no observed values)."""


class CalibrationError(MissCompatError, ValueError):
    """No intercept reaches the requested mean probability."""


class SingularDesignError(MissCompatError, ValueError):
    """The design matrix is rank deficient."""

    def __init__(self, message, dependent_columns=()):
        super().__init__(message)
        self.dependent_columns = tuple(dependent_columns)


class DegenerateOutcomeError(MissCompatError, ValueError):
    """A binary response has a single class."""


class NumericError(MissCompatError, ArithmeticError):
    """A covariance matrix is not positive semidefinite."""


class ContractError(MissCompatError, ValueError):
    """Data does not satisfy the contract of a fitted package or bundle."""


class HandlingError(MissCompatError, ValueError):
    """A validation handling cannot be applied to a bundle."""


class DecodeError(MissCompatError, ValueError):
    """A serialized package or bundle is corrupt or from another format version."""


class DevelopmentError(MissCompatError, ValueError):
    """A prediction model could not be developed."""


class UndefinedMetricError(MissCompatError, ValueError):
    """A performance metric is undefined for the given outcomes."""


class BiasError(MissCompatError, KeyError):
    """The estimand-matched validation cell is missing."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ArgumentError(MissCompatError, ValueError):
    """An option, plan entry or grid key is invalid."""
