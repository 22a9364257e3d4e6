"""
Random spatial and intensity augmentation.

The spatial part maps every output point p to the source point
    center + A (p - center) + t + d(p)
where A combines a rotation and a per-axis scale, t is a translation and
d is an elastic displacement interpolated from a coarse random control grid.
Image and labels are resampled once through the composed mapping, then the
image intensities become v * s + t.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import ndimage
from scipy.spatial.transform import Rotation

from src.data.preprocess_data import IMAGE_PAD_VALUE, LABEL_PAD_VALUE, grid_points, sample_at, source_coordinates
from src.data.volume import GridSpec, LabelVolume, Volume


class AugmentParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    rotation_degrees: float = Field(15.0, ge=0.0)
    translation_mm: float = Field(10.0, ge=0.0)
    scale_range: Tuple[float, float] = (0.85, 1.15)
    elastic_grid: int = Field(8, ge=2)
    elastic_sigma_mm: float = Field(5.0, ge=0.0)
    intensity_shift: float = Field(0.2, ge=0.0)
    intensity_scale_range: Tuple[float, float] = (0.8, 1.25)

    @model_validator(mode="after")
    def _ranges_contain_identity(self):
        for name in ("scale_range", "intensity_scale_range"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= 1.0 <= hi:
                raise ValueError(f"{name} must satisfy 0 < low <= 1 <= high, got {(lo, hi)}")
        return self

    @classmethod
    def none(cls) -> "AugmentParams":
        return cls(
            rotation_degrees=0.0,
            translation_mm=0.0,
            scale_range=(1.0, 1.0),
            elastic_sigma_mm=0.0,
            intensity_shift=0.0,
            intensity_scale_range=(1.0, 1.0),
        )


@dataclass
class SpatialTransform:
    """Output-to-source point mapping; control holds elastic offsets (3, g, g, g) in mm, x/y/z first."""

    center: np.ndarray
    matrix: np.ndarray
    translation: np.ndarray
    control: Optional[np.ndarray] = None

    @property
    def is_identity(self) -> bool:
        return (
            np.array_equal(self.matrix, np.eye(3))
            and not np.any(self.translation)
            and (self.control is None or not np.any(self.control))
        )

    def displacement(self, target: GridSpec) -> np.ndarray:
        """Elastic offsets at every target voxel, shape (N, 3), x fastest."""
        if self.control is None:
            return np.zeros((int(np.prod(target.dims)), 3))
        grid = self.control.shape[1]
        axes = [np.linspace(0.0, grid - 1.0, n) if n > 1 else np.zeros(1) for n in target.shape]
        coords = np.stack(np.meshgrid(*axes, indexing="ij")).reshape(3, -1)
        # control is indexed (component, z, y, x) like the arrays
        return np.stack(
            [ndimage.map_coordinates(self.control[c], coords, order=1, mode="nearest") for c in range(3)],
            axis=1,
        )

    def map_points(self, points: np.ndarray, target: GridSpec) -> np.ndarray:
        mapped = self.center + (points - self.center) @ self.matrix.T + self.translation
        return mapped + self.displacement(target)


@dataclass
class IntensityTransform:
    scale: float = 1.0
    shift: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and self.shift == 0.0


def identity_transform(center) -> SpatialTransform:
    return SpatialTransform(np.asarray(center, dtype=np.float64), np.eye(3), np.zeros(3))


def sample_transform(params: AugmentParams, rng: np.random.Generator, center) -> Tuple[SpatialTransform, IntensityTransform]:
    """
    Draw one augmentation. The draw order is fixed (rotation, scale,
    translation, elastic, intensity) so a seeded rng reproduces it.
    """
    angles = rng.uniform(-params.rotation_degrees, params.rotation_degrees, size=3)
    scales = rng.uniform(*params.scale_range, size=3)
    translation = rng.uniform(-params.translation_mm, params.translation_mm, size=3)
    g = params.elastic_grid
    control = rng.normal(0.0, params.elastic_sigma_mm, size=(3, g, g, g)) if params.elastic_sigma_mm > 0 else None

    log_lo, log_hi = np.log(params.intensity_scale_range)
    intensity = IntensityTransform(
        scale=float(np.exp(rng.uniform(log_lo, log_hi))),
        shift=float(rng.uniform(-params.intensity_shift, params.intensity_shift)),
    )

    if np.any(angles) or np.any(scales != 1.0):
        matrix = Rotation.from_euler("xyz", angles, degrees=True).as_matrix() @ np.diag(scales)
    else:
        matrix = np.eye(3)
    spatial = SpatialTransform(np.asarray(center, dtype=np.float64), matrix, translation, control)
    return spatial, intensity


def apply_transform(
    vol: Volume,
    labels: LabelVolume,
    spatial: SpatialTransform,
    intensity: IntensityTransform = IntensityTransform(),
    target: Optional[GridSpec] = None,
) -> Tuple[Volume, LabelVolume]:
    """Resample image (linear) and labels (nearest) through one mapping onto target."""
    target = target or vol.grid
    if spatial.is_identity and target.same_as(vol.grid) and target.same_as(labels.grid):
        image = vol.data.astype(np.float32)
        label_data = labels.data.copy()
    else:
        points = spatial.map_points(grid_points(target), target)
        image = sample_at(vol, source_coordinates(vol.grid, points), 1, IMAGE_PAD_VALUE).reshape(target.shape)
        label_data = sample_at(labels, source_coordinates(labels.grid, points), 0, LABEL_PAD_VALUE).reshape(target.shape)

    if not intensity.is_identity:
        image = (image * np.float32(intensity.scale) + np.float32(intensity.shift)).astype(np.float32)
    return Volume.on_grid(image, target), LabelVolume.on_grid(label_data, target)


def augment(
    vol: Volume,
    labels: LabelVolume,
    params: AugmentParams,
    rng: np.random.Generator,
    target: Optional[GridSpec] = None,
) -> Tuple[Volume, LabelVolume]:
    """
    Randomly transform an image/label pair.

    Args:
        vol: normalized image
        labels: label volume on the same grid
        params: augmentation ranges
        rng: augmentation stream
        target: output grid; defaults to the input grid

    Returns:
        tuple: (image, labels) on the target grid
    """
    target = target or vol.grid
    spatial, intensity = sample_transform(params, rng, target.center)
    return apply_transform(vol, labels, spatial, intensity, target)
