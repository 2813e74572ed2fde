"""Toolkit-wide exception types, mapped to CLI exit codes."""


class DataFormatError(Exception):
    """Malformed or inconsistent input data (CSV rows, weight stores...)."""


class NumericalError(Exception):
    """Unrecoverable numerical failure (covariance collapse, singular solve)."""
