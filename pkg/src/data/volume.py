"""
Volume types shared by IO, preprocessing, training and inference.

Metadata tuples (dims, spacing, origin, indices) are ordered (x, y, z) as in
MetaImage headers. Voxel arrays are stored (z, y, x) so that x varies
fastest in memory.
"""

from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

Vec3 = Tuple[float, float, float]
Dims3 = Tuple[int, int, int]

DIRECTION_TOLERANCE = 1e-4


def _vec3(values, cast=float) -> tuple:
    values = tuple(cast(v) for v in values)
    if len(values) != 3:
        raise ValueError(f"Expected 3 components, got {len(values)}")
    return values


@dataclass(eq=False)
class GridSpec:
    """Discrete sampling lattice in physical space."""

    dims: Dims3
    spacing: Vec3
    origin: Vec3 = (0.0, 0.0, 0.0)
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.dims = _vec3(self.dims, int)
        self.spacing = _vec3(self.spacing)
        self.origin = _vec3(self.origin)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3, 3)

    @property
    def shape(self) -> Tuple[int, int, int]:
        """Array shape (z, y, x) of a volume on this grid."""
        return self.dims[::-1]

    @property
    def extent(self) -> np.ndarray:
        """Physical extent of the voxel footprints, mm."""
        return np.asarray(self.dims, dtype=np.float64) * np.asarray(self.spacing)

    @property
    def center(self) -> np.ndarray:
        half = (np.asarray(self.dims, dtype=np.float64) - 1.0) / 2.0
        return self.index_to_physical(half)

    def index_to_physical(self, index) -> np.ndarray:
        """Map continuous (x, y, z) indices, shape (..., 3), to physical points."""
        index = np.asarray(index, dtype=np.float64)
        return np.asarray(self.origin) + (index * np.asarray(self.spacing)) @ self.direction.T

    def physical_to_index(self, points) -> np.ndarray:
        """Inverse of index_to_physical."""
        points = np.asarray(points, dtype=np.float64)
        local = (points - np.asarray(self.origin)) @ self.direction
        return local / np.asarray(self.spacing)

    def same_as(self, other: "GridSpec") -> bool:
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.origin == other.origin
            and np.array_equal(self.direction, other.direction)
        )


@dataclass(eq=False)
class Volume:
    """Scalar 3D field with physical metadata."""

    data: np.ndarray
    spacing: Vec3 = (1.0, 1.0, 1.0)
    origin: Vec3 = (0.0, 0.0, 0.0)
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"Volume data must be 3D, got shape {self.data.shape}")
        self.spacing = _vec3(self.spacing)
        self.origin = _vec3(self.origin)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3, 3)

    @property
    def dims(self) -> Dims3:
        z, y, x = self.data.shape
        return (x, y, z)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.dims, self.spacing, self.origin, self.direction.copy())

    def with_data(self, data: np.ndarray):
        """Same geometry, new voxel values."""
        return replace(self, data=data, direction=self.direction.copy())

    @classmethod
    def on_grid(cls, data: np.ndarray, grid: GridSpec):
        data = np.asarray(data)
        if data.shape != grid.shape:
            raise ValueError(f"Data shape {data.shape} does not match grid shape {grid.shape}")
        return cls(data, grid.spacing, grid.origin, grid.direction.copy())


@dataclass(eq=False)
class LabelVolume(Volume):
    """Volume of unsigned 8-bit labels in {0..C}."""

    def __post_init__(self):
        super().__post_init__()
        if self.data.dtype != np.uint8:
            if self.data.size and (self.data.min() < 0 or self.data.max() > 255):
                raise ValueError("Label values must fit in an unsigned 8-bit integer")
            self.data = self.data.astype(np.uint8)


def direction_is_orthonormal(direction: np.ndarray, tol: float = DIRECTION_TOLERANCE) -> bool:
    direction = np.asarray(direction, dtype=np.float64)
    return bool(np.allclose(direction.T @ direction, np.eye(3), atol=tol))
