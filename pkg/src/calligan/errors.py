"""Exception hierarchy shared by all calligan modules.

The CLI maps these onto exit codes: ConfigError/UsageError -> 2,
DataError -> 3, NumericsError -> 4.
"""


class CalliganError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CalliganError):
    """Invalid configuration value (bad epsilon, non power-of-two size, ...)."""


class UsageError(CalliganError):
    """API misuse (backward on a non-scalar, malformed response file, ...)."""


class DimensionError(CalliganError):
    """Shape or channel mismatch between tensors."""


class DataError(CalliganError):
    """Dataset problem: unreadable file, empty pairing, insufficient pairs."""


class DomainError(CalliganError):
    """Value outside an operation's mathematical domain."""


class NumericsError(CalliganError):
    """Non-finite value produced during a forward or backward pass."""
