"""Numerical spectral geometry of the Podles quantum spheres."""

from .qcore import DeformationParams, HalfInt, half, qnumber, qpower

__all__ = ["DeformationParams", "HalfInt", "half", "qnumber", "qpower"]
__version__ = "0.1.0"
