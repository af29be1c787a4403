"""Device-aware acoustic scene classification under a low-complexity budget."""

__version__ = "0.1.0"
