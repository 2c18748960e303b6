"""Spectral Galerkin simulator and verification harness for the stochastic
Allen-Cahn-Navier-Stokes system with a logarithmic potential."""

__version__ = "0.1.0"
