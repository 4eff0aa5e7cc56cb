"""Reduced-order forecasting of epidemic SIR rates."""

__version__ = "0.1.0"
