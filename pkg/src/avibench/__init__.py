"""Desk-scale bird-vocalization classification benchmark."""

__version__ = "0.1.0"
