"""Exception hierarchy shared across the package.

Errors are split by how a batch caller should react: configuration and data
problems are the caller's fault (CLI exit code 2), numeric failures happen
inside an otherwise valid computation (CLI exit code 1).
"""

from __future__ import annotations


class RegpcaError(Exception):
    """Base class for all package errors."""

    kind = "error"


class ConfigError(RegpcaError):
    """Invalid configuration, option, or argument."""

    kind = "config"


class DataError(RegpcaError):
    """Malformed or inconsistent input data."""

    kind = "data"


class NumericError(RegpcaError):
    """Numeric failure: singular system, infeasible window, solver breakdown."""

    kind = "numeric"
