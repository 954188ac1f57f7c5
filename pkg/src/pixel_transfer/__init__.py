"""Pixel-level domain transfer: converter and discriminators on a small numpy autodiff."""

__version__ = "0.1.0"
