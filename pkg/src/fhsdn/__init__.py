"""Two-timescale software-defined multi-cell scheduling simulator."""

__version__ = "0.1.0"
