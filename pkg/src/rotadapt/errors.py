"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes (config 2, data 3, numerical 4).
"""


class RotadaptError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(RotadaptError):
    """Invalid or inconsistent configuration (bad method name, bad flag combo, ...)."""


class DataError(RotadaptError):
    """Invalid data: bad manifest, missing files, shape mismatches, empty datasets."""


class NumericalError(RotadaptError):
    """Non-finite loss or other numerical failure during optimization."""
