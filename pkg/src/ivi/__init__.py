"""Stochastic-gradient variational inference for linear PDE inverse problems."""

__version__ = "0.1.0"
