"""Stepwise low-light image enhancement with a pixel-wise actor-critic policy.

The package trains a small fully-convolutional agent that repeatedly bends a
quadratic brightening curve at every pixel, scored only by non-reference
losses, and exposes the result through a CLI and an interactive HTTP service.
"""

__version__ = "0.1.0"
