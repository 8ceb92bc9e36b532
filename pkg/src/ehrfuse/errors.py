"""Error taxonomy shared across the package.

The CLI maps these onto stable exit codes: ConfigError -> 2,
DataError -> 3, anything else -> 4.
"""


class EhrFuseError(Exception):
    """Base class for all package errors."""


class ConfigError(EhrFuseError):
    """Bad run configuration, schema/template validation failure."""


class DataError(EhrFuseError):
    """Problems with input tables, caches, or checkpoints."""


class NumericalError(EhrFuseError):
    """Non-finite values or divergence during computation."""
