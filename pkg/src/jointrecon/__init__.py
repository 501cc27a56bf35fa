"""Joint multi-echo, motion-resolved compressed-sensing reconstruction."""

__version__ = "0.1.0"
