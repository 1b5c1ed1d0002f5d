"""Numerical study of sign-changing bubble towers for the Brezis-Nirenberg problem on a ball."""

from .radial_core import ArtifactError, RadialField, RadialGrid, build_grid

__all__ = ["ArtifactError", "RadialField", "RadialGrid", "build_grid"]
__version__ = "0.1.0"
