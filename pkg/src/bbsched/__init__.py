"""Closed-loop Bayesian dynamic scheduling for multipurpose batch plants."""

__version__ = "0.1.0"
