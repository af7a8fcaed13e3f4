from .render import PlotError, PlotSpec, gaussian_kde, render

__all__ = ["PlotError", "PlotSpec", "gaussian_kde", "render"]
