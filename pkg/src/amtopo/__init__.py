"""Level-set topology optimization with additive-manufacturing constraints."""

__version__ = "0.1.0"
