"""Simulation and extremal limit theory for stochastic volatility fields ``X = Y Z``
on the integer lattice."""

__version__ = "0.1.0"
