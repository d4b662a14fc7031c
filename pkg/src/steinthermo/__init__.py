"""Numerical workbench for one-shot divergences, thermodynamic state
conversion and spectral-rate collapse in hypothesis testing."""

__version__ = "0.1.0"
