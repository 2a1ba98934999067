"""Mixed-model analysis of speaker-verification target scores against
enrollment/test acoustic mismatch."""

__version__ = "0.1.0"
