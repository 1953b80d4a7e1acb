"""Contour-weighted losses, PDANet blocks and evaluation metrics for imbalanced volumetric segmentation."""

__version__ = "0.1.0"
