"""Robust blind deconvolution of graph signals under a perturbed topology."""

__version__ = "0.1.0"
