"""Spectral simulator and audit harness for the spin-accumulation / Landau-Lifshitz-Gilbert system."""

__version__ = "0.1.0"
