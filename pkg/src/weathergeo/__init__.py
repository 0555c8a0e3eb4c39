"""Weather-robust drone-to-satellite retrieval with text-gated fusion, in NumPy."""

__version__ = "0.1.0"
