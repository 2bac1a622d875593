"""Multi-wearable workout activity detection pipeline."""

__version__ = "0.1.0"
