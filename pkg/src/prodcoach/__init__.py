"""Productivity coaching service: conversation engine, affect cues, analytics."""

__version__ = "0.1.0"
