"""Markov chain patrol strategies with maximal return time entropy."""

__version__ = "0.1.0"
