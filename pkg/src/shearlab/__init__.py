"""Pseudo-spectral laboratory for Boussinesq perturbations of Couette flow in sheared coordinates."""

__version__ = "0.1.0"
