"""Stochastic six-vertex models: weights, dynamics, couplings and verification."""

__version__ = "0.1.0"
