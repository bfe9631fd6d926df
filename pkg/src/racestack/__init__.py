"""Desk-scale multi-agent autonomous racing stack and closed-loop simulator."""

__version__ = "0.1.0"
