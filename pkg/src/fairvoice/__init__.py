"""Age-fair voice-based Parkinson's screening toolkit."""

__version__ = "0.1.0"
