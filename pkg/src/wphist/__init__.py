"""Wavelet-packet historical functional linear model with spike-and-slab Gibbs sampling."""

__version__ = "0.1.0"
