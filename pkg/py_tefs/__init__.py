"""
Py-TeFS - Temporal-controlled Frame Swap capture simulator and evaluation toolkit.

This package provides a deterministic single-viewport engine simulation, the
frame-swap capture protocols built on top of it, ground-truth depth conversion,
dataset persistence and the trajectory evaluation used to compare capture methods.
"""

__version__ = "1.0.0"
