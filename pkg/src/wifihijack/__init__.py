"""Simulator for TCP hijacking through the Wi-Fi frame-size side channel."""

__version__ = "0.1.0"
