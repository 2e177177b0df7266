"""Persona-centric story generation pipeline with pluggable model providers."""

__version__ = "0.1.0"
