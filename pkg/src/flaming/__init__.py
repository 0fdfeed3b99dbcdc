"""Motion-aware group activity recognition on a synthetic video benchmark."""

__version__ = "0.1.0"
