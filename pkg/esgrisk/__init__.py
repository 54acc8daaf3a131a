"""Utility-based shortfall risk measures for joint financial and ESG rating positions."""

__version__ = "0.1.0"
