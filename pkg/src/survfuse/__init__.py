"""Multimodal variational survival analysis with Weibull time heads."""

__version__ = "0.1.0"
