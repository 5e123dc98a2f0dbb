"""Markov logic network inference: exact, Gibbs/AIS, lifted and thermal-state engines."""

__version__ = "0.1.0"
