"""Stochastic Galerkin solver for Wick-type parabolic equations with random potentials."""

__version__ = "0.1.0"
