"""mimebench: skeleton-based action recognition toolkit and benchmark harness."""

__version__ = "0.1.0"
