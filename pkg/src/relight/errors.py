"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI: usage/config errors -> 1, data errors -> 2,
numeric failures -> 3.
"""


class RelightError(Exception):
    pass


class ShapeError(RelightError):
    """Tensor extents incompatible with the requested operation."""


class ConfigError(RelightError):
    """Bad configuration value, unknown key, or invalid CLI usage."""


class DataError(RelightError):
    """Missing, malformed, or undecodable data files."""


class ParseError(DataError):
    """Malformed image or manifest payload; message carries a byte offset
    where applicable."""


class NumericError(RelightError):
    """NaN loss, failed gradient check, or other numeric breakdown."""
