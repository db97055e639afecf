"""Hybrid PKI / web-of-trust simulator for peer-to-peer energy markets."""

__version__ = "0.1.0"
