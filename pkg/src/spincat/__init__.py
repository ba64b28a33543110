"""Fast spin-cat generation by a coherently driven one-axis twist."""

__version__ = "0.1.0"
