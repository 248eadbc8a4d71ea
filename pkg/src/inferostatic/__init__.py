"""Score and likelihood-ratio estimation with inferostatic networks."""

__version__ = "0.1.0"
