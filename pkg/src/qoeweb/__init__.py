"""Relating TCP-level QoS degradation to ISO 9241-11 style Web usability."""

__version__ = "0.1.0"
