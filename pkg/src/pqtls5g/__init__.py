"""Desk-scale PQC TLS-over-5G benchmark harness."""

__version__ = "0.1.0"
