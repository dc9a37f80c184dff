"""Driven-dissipative chiral spin networks: models, dynamics, dark states and metrology."""

__version__ = "0.1.0"
