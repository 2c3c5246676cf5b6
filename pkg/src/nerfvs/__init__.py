"""Voxel radiance-field free view synthesis guided by a mesh scaffold.

A differentiable volumetric renderer over a dense voxel grid, trained with
photometric, robust pseudo-depth, and variance losses whose strength is
adjusted by per-pixel view coverage baked from a triangle-mesh scaffold.
"""

__version__ = "0.1.0"
