"""Multi-domain identity-preserving image translation and quartet-loss re-identification."""

__version__ = "0.1.0"
