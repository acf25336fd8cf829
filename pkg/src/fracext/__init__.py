"""Discretized non-symmetric elliptic operators, their fractional powers and extensions."""

__version__ = "0.1.0"
