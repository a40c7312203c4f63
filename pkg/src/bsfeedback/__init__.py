"""Beam-space downlink CSI acquisition for FDD massive MIMO."""

__version__ = "0.1.0"
