"""Exception hierarchy shared by the whole pipeline.

Exit-code mapping for the CLI: ParameterError -> 1 (usage),
DataError and subclasses -> 2, NumericError -> 3.
"""


class VidcapError(Exception):
    pass


class ParameterError(VidcapError):
    """Invalid hyperparameter or configuration value."""


class DimensionError(VidcapError):
    """Shape mismatch between tensors; message names both shapes."""


class DataError(VidcapError):
    """Malformed, inconsistent or missing input data."""


class FormatError(DataError):
    """Binary or text file does not follow its declared format."""


class NumericError(VidcapError):
    """Non-finite value appeared where finite math was required."""
