"""SVD-factorized contrastive learning for critical-transition detection."""

__version__ = "0.1.0"
