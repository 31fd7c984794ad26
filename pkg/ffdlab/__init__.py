"""Fractional differentiation and triple-barrier research pipeline for futures bars."""

__version__ = "0.1.0"
