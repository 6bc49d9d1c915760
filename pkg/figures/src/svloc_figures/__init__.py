"""Figure rendering for the localization simulator's CSV outputs."""

from .render import PLOT_KINDS, PlotSpec, SchemaError, render

__version__ = "0.1.0"
