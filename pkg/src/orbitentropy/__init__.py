"""Entropy of Z_+^k actions: exact values for expanding circle actions and orbit-space estimators."""

__version__ = "0.1.0"
