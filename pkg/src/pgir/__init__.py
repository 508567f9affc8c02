"""Physics-guided inverse regression for image-based moisture/quality prediction."""

__version__ = "0.1.0"
