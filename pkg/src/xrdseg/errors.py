"""Exception hierarchy.

Every error carries enough structure for callers (and the CLI) to report
what went wrong without parsing messages.  The CLI maps the three families
to exit codes: ``ConfigError`` -> 2, ``DataError`` -> 3, ``NumericError`` -> 4.
"""

from __future__ import annotations


class XRDSegError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(XRDSegError, ValueError):
    exit_code = 2


class DataError(XRDSegError, ValueError):
    exit_code = 3


class ShapeError(DataError):
    """Array extents disagree with what an operation requires.

    ``dim`` names the offending dimension (e.g. ``"Cin"`` or ``"H"``);
    ``expected`` and ``got`` hold the conflicting values.
    """

    def __init__(self, message: str, *, dim: str | None = None, expected=None, got=None):
        super().__init__(message)
        self.dim = dim
        self.expected = expected
        self.got = got


class NumericError(XRDSegError, FloatingPointError):
    exit_code = 4
