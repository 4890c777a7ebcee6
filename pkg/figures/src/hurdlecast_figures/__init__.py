"""Render figures from hurdlecast pipeline files.

This package deliberately has no dependency on hurdlecast itself: it
consumes the CSV and JSON files the pipeline CLI emits and nothing
else, so it can live on the far side of a process or language boundary.
"""

__version__ = "0.1.0"

from .render import FIGURE_KINDS, FigureSpec, render

__all__ = ["FIGURE_KINDS", "FigureSpec", "render", "__version__"]
