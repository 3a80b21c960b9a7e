"""Semi-supervised segmentation with proxy cross-attention and consistency learning."""

__version__ = "0.1.0"
