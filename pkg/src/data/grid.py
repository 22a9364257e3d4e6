"""
Grid solvers for the localization and segmentation inputs.

Both grids follow one rule: dims = ceil(extent / spacing) rounded up to the
grid multiple and clamped below by the minimum; when a dim would exceed the
maximum, the spacing grows uniformly by the smallest factor that fits every
axis. The grid is centered on the physical center of the covered region.
"""

import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from src.data.volume import GridSpec, Volume

CEIL_TOLERANCE = 1e-6


class GridError(ValueError):
    """Grid bounds that cannot be satisfied."""


class GridBounds(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    base_spacing: float
    min_dims: Tuple[int, int, int]
    max_dims: Tuple[int, int, int]
    multiple: int = 16

    @model_validator(mode="after")
    def _check(self):
        if self.base_spacing <= 0:
            raise ValueError("base_spacing must be positive")
        if self.multiple < 1:
            raise ValueError("multiple must be >= 1")
        for lo, hi in zip(self.min_dims, self.max_dims):
            if lo < 1 or lo > hi:
                raise ValueError(f"invalid dim bounds {self.min_dims} .. {self.max_dims}")
            if lo % self.multiple or hi % self.multiple:
                raise ValueError(f"dim bounds must be multiples of {self.multiple}")
        return self

    def aligned_to(self, divisor: int) -> "GridBounds":
        """Bounds whose multiple also satisfies a network's pooling divisor."""
        multiple = self.multiple * divisor // math.gcd(self.multiple, divisor)
        if multiple == self.multiple:
            return self
        return self.model_copy(update={"multiple": multiple})


LOCALIZATION_BOUNDS = GridBounds(base_spacing=6.0, min_dims=(32, 32, 32), max_dims=(80, 80, 256), multiple=16)
SEGMENTATION_BOUNDS = GridBounds(base_spacing=2.0, min_dims=(32, 32, 32), max_dims=(160, 128, 160), multiple=32)


def _ceil(value: float) -> int:
    return int(math.ceil(value - CEIL_TOLERANCE))


def _round_up(value: int, multiple: int) -> int:
    return -(-value // multiple) * multiple


def solve_dims(extent, bounds: GridBounds) -> Tuple[Tuple[int, int, int], float]:
    """Dims and isotropic spacing covering a physical extent (x, y, z) in mm."""
    extent = np.asarray(extent, dtype=np.float64)
    if np.any(extent <= 0):
        raise GridError(f"Extent must be positive, got {extent.tolist()}")

    spacing = bounds.base_spacing
    raw = extent / spacing
    factor = float(np.max(raw / np.asarray(bounds.max_dims, dtype=np.float64)))
    if factor > 1.0 and any(_ceil(r) > m for r, m in zip(raw, bounds.max_dims)):
        spacing *= factor

    dims = []
    for length, lo, hi in zip(extent, bounds.min_dims, bounds.max_dims):
        n = _round_up(max(_ceil(length / spacing), 1), bounds.multiple)
        dims.append(min(max(n, lo), hi))
    return tuple(dims), spacing


def centered_grid(extent, center, direction, bounds: GridBounds) -> GridSpec:
    dims, spacing = solve_dims(extent, bounds)
    direction = np.asarray(direction, dtype=np.float64)
    half = spacing * (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
    origin = np.asarray(center, dtype=np.float64) - direction @ half
    return GridSpec(dims, (spacing,) * 3, tuple(origin), direction.copy())


def localization_grid(vol: Volume, bounds: GridBounds = LOCALIZATION_BOUNDS) -> GridSpec:
    """Coarse grid covering the whole volume."""
    grid = vol.grid
    return centered_grid(grid.extent, grid.center, grid.direction, bounds)


def segmentation_grid(roi, bounds: GridBounds = SEGMENTATION_BOUNDS) -> GridSpec:
    """Fine grid covering the (padded) ROI."""
    return centered_grid(roi.extent, roi.center, roi.reference.direction, bounds)
