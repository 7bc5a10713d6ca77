"""Numerical lab for the circle maps x -> x + a + L ln|phi(x)|."""

from .map_core import CircleMap, ExperimentProfile, PhiSpec

__all__ = ["CircleMap", "ExperimentProfile", "PhiSpec"]
