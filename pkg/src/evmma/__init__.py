"""Malicious mode attacks on aggregated EV charging load and their MIADRC defense."""

__version__ = "0.1.0"
