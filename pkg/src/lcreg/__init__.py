"""Grid-based lane-change regulation for freeway traffic with connected vehicles."""

__version__ = "0.1.0"
