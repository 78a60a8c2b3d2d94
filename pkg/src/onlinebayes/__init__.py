"""Exact and recursive Bayesian learning on finite spaces, Gaussian processes and Dirichlet processes."""

__version__ = "0.1.0"
