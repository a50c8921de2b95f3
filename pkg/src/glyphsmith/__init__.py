"""Compose vector CJK glyphs from components with a learned affine regressor."""

__version__ = "0.1.0"
