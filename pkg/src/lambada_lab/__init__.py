"""Serverless analytics engine over a deterministic simulated cloud substrate."""

__version__ = "0.1.0"
