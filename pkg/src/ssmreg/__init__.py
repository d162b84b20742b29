"""Unsupervised deformable multi-modal registration with selective state-space layers."""

__version__ = "0.1.0"
