"""Privacy-preserving representation learning against membership, property and reconstruction inference."""

__version__ = "0.1.0"
