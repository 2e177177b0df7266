"""Continuation-score trainer and scoring service."""

__version__ = "0.1.0"


class SchemaError(Exception):
    """Dataset rows violate the JSONL contract."""


class DegenerateData(Exception):
    """Training split contains a single label class."""
