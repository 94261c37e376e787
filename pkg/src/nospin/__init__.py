"""Planar n-body cluster dynamics in shape and blow-up coordinates, with spin diagnostics."""

from .core import CartesianState, Cluster, CollisionError, MassSystem

__version__ = "0.1.0"

__all__ = ["CartesianState", "Cluster", "CollisionError", "MassSystem", "__version__"]
