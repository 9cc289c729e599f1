"""Volumetric simulation similarity toolkit.

Generates entropy-calibrated sequences of 3D physical fields, trains a
multiscale Siamese convolutional metric on them with a correlation loss,
and evaluates learned and classical metrics via rank correlation,
invariance sweeps, and a long-horizon case-study protocol.
"""

from .fields import VolumeField, field_from_array

__all__ = ["VolumeField", "field_from_array"]
__version__ = "0.1.0"
