"""Task-graph learning for bimanual manipulation demonstrations."""

__version__ = "0.1.0"
