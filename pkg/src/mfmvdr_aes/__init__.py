"""Acoustic echo suppression with a learned multi-frame MVDR filter."""

__version__ = "0.1.0"
