"""Figure regeneration for the nested/multilevel Monte Carlo harness outputs."""

from .render import FIGURE_KINDS, PlotSpec, RenderError, render

__version__ = "0.1.0"

__all__ = ["FIGURE_KINDS", "PlotSpec", "RenderError", "render", "__version__"]
