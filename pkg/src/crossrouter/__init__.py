"""Simulated host/guest router, cross-segment covert channels, detectors and mitigations."""

__version__ = "0.1.0"
