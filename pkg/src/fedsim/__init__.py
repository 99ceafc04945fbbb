"""Deterministic federated learning simulator with a differential-privacy layer."""

__version__ = "0.1.0"
