"""Desk-scale numerical laboratory for van der Waals interactions of model atoms."""

__version__ = "0.1.0"
