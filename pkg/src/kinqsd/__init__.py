"""Kinetic SDE engine: absorbed simulation, quasi-stationary estimation and Lyapunov checks."""

__version__ = "0.1.0"
