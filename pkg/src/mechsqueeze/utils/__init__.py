"""
Utility functions for mechsqueeze
"""

from .helpers import format_quantity, parse_band, parse_grid

__all__ = ["format_quantity", "parse_band", "parse_grid"]
