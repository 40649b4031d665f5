"""Detection of data-integrity attacks on hourly load streams."""

__version__ = "0.1.0"
