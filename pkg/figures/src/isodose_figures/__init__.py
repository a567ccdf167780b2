"""Figure rendering for dose-response curve and metrics CSVs."""

from isodose_figures.render import KINDS, FigureSpec, render, scaled_metric

__version__ = "0.1.0"

__all__ = ["KINDS", "FigureSpec", "render", "scaled_metric", "__version__"]
