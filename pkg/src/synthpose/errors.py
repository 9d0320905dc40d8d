"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class SynthposeError(Exception):
    """Base class for package errors."""


class ConfigError(SynthposeError):
    """Invalid or inconsistent configuration."""


class DataError(SynthposeError):
    """Missing, malformed, or conflicting data on disk."""


class GenerationError(DataError):
    """Scene sampling could not satisfy its constraints."""


class NumericalError(SynthposeError):
    """Non-finite values encountered where finite ones are required."""
