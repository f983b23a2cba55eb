"""Constrained RL with a binary cost function inferred from segment-level
safe/unsafe feedback, plus the environments and exact oracles used to
verify it."""

__version__ = "0.1.0"
