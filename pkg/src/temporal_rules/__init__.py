"""Rule-template optimization for temporal panel data."""

__version__ = "1.0.0"
