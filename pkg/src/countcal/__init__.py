"""Poisson Bayesian calibration with a Scaled Vecchia Gaussian-process surrogate."""

__version__ = "0.1.0"
