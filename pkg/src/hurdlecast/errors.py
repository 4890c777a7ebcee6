"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes, so raising the right category matters
as much as the message text.
"""


class HurdlecastError(Exception):
    """Base class for package errors; exit_code drives the CLI exit status."""

    exit_code = 4


class ConfigError(HurdlecastError):
    """Bad or inconsistent configuration: missing files, infeasible settings."""

    exit_code = 2


class ValidationError(HurdlecastError):
    """Input data violates a documented contract."""

    exit_code = 3


class TuningError(HurdlecastError):
    """Hyperparameter search could not produce a usable result."""


class SelectionError(HurdlecastError):
    """Component selection is missing required forecasts or history."""
