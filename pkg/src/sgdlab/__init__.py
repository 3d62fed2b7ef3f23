"""Stability and generalization experiments for minibatch and local SGD."""

__version__ = "0.1.0"
