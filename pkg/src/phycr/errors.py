"""Exception taxonomy shared by every module.

The CLI maps these onto exit codes: configuration problems exit 2,
numeric failures exit 3, file problems (``OSError``/``FormatError``) exit 4.
"""


class PhycrError(Exception):
    """Base class for all library errors."""


class ConfigurationError(PhycrError, ValueError):
    pass


class DimensionError(PhycrError, ValueError):
    pass


class ContractError(PhycrError, ValueError):
    pass


class AlignmentError(PhycrError, ValueError):
    pass


class NumericError(PhycrError, ArithmeticError):
    """Raised on NaN/inf values. ``step`` names the offending step when known."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class FormatError(PhycrError, OSError):
    """A file does not match its binary layout."""
