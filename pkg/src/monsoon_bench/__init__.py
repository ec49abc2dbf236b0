"""Gridded monsoon rainfall forecasting and verification at desk scale."""

__version__ = "0.1.0"
