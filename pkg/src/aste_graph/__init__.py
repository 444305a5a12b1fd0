"""Span-based aspect sentiment triplet extraction over dual syntactic/semantic graphs."""

__version__ = "0.1.0"

POLARITIES = ("POS", "NEU", "NEG")
