"""Poincare-ball graph network toolkit: manifold kernels, gyromidpoint
aggregation, a small reverse-mode autodiff engine, and the training CLI."""

from . import autodiff, graphdata, layers, manifold, midpoint, model

__version__ = "0.1.0"

__all__ = ["autodiff", "graphdata", "layers", "manifold", "midpoint", "model",
           "__version__"]
