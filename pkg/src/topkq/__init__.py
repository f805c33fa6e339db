"""Distributed top-k selection through smoothed quantile estimation."""

from . import scoremodel, smoothing, solvers, topology

__version__ = "0.1.0"

__all__ = ["scoremodel", "smoothing", "solvers", "topology"]
