"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""


class MonsoonBenchError(Exception):
    exit_code = 1


class ConfigError(MonsoonBenchError, ValueError):
    """Bad configuration value, missing config file, or unusable setup."""

    exit_code = 2


class UsageError(MonsoonBenchError, ValueError):
    """API misuse (stale trace, empty grid for rendering, ...)."""

    exit_code = 2


class DataError(MonsoonBenchError, ValueError):
    """Input data violates the file schema or physical constraints."""

    exit_code = 3


class SchemaError(DataError):
    pass


class ShapeError(DataError):
    pass


class ConventionError(DataError):
    """Coordinate does not follow the expected grid convention."""


class EmptyCandidateError(DataError):
    pass


class MissingDayError(DataError):
    pass


class AlignmentError(DataError):
    pass


class EvaluationError(DataError):
    pass


class NumericError(MonsoonBenchError, ArithmeticError):
    """NaN/Inf encountered or training diverged."""

    exit_code = 4


class EmptyWindowsWarning(UserWarning):
    """No supervised window could be formed at the requested context length."""
