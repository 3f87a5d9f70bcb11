"""Exception taxonomy shared across the package.

The CLI maps these onto its documented exit codes, so raise the most
specific class that applies.
"""


class TriStreamError(Exception):
    """Base class for all package errors."""


class ShapeError(TriStreamError):
    """Tensor dims inconsistent with a layer or model contract."""


class NumericError(TriStreamError):
    """Non-finite values or a degenerate numerical situation."""


class FormatError(TriStreamError):
    """Malformed TNSR/CVXG file or manifest."""


class ConfigError(TriStreamError):
    """Invalid configuration value or unparseable config file."""


class DataError(TriStreamError):
    """Dataset violates a precondition (missing modality, single class, ...)."""
