"""Spectral sums of large matrices via windowed histograms and ridge solves."""

__version__ = "0.1.0"
