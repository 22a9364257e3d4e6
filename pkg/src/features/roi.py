"""
Region-of-interest construction: from ground truth (training), from a coarse
localization mask (inference), and ROI padding.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.data.volume import GridSpec, LabelVolume, Volume

ROI_PAD_VOXELS = 16
ROI_PAD_SPACING = 2.0
INDEX_TOLERANCE = 1e-6


class EmptyLabelError(ValueError):
    """Label volume without any foreground voxel."""


@dataclass(eq=False)
class Roi:
    """Inclusive (x, y, z) voxel bounding box in a reference grid."""

    min_index: Tuple[int, int, int]
    max_index: Tuple[int, int, int]
    reference: GridSpec

    def __post_init__(self):
        self.min_index = tuple(int(v) for v in self.min_index)
        self.max_index = tuple(int(v) for v in self.max_index)
        for lo, hi, n in zip(self.min_index, self.max_index, self.reference.dims):
            if not 0 <= lo <= hi < n:
                raise ValueError(f"ROI {self.min_index}..{self.max_index} invalid for dims {self.reference.dims}")

    @property
    def size(self) -> Tuple[int, int, int]:
        return tuple(hi - lo + 1 for lo, hi in zip(self.min_index, self.max_index))

    @property
    def extent(self) -> np.ndarray:
        """Physical extent of the covered voxel footprints, mm."""
        return np.asarray(self.size, dtype=np.float64) * np.asarray(self.reference.spacing)

    @property
    def center(self) -> np.ndarray:
        middle = (np.asarray(self.min_index, dtype=np.float64) + np.asarray(self.max_index)) / 2.0
        return self.reference.index_to_physical(middle)

    @property
    def slices(self) -> Tuple[slice, slice, slice]:
        """Array slices (z, y, x) selecting the ROI."""
        return tuple(slice(lo, hi + 1) for lo, hi in zip(self.min_index[::-1], self.max_index[::-1]))

    def mask(self) -> np.ndarray:
        inside = np.zeros(self.reference.shape, dtype=bool)
        inside[self.slices] = True
        return inside

    def same_as(self, other: "Roi") -> bool:
        return (
            self.min_index == other.min_index
            and self.max_index == other.max_index
            and self.reference.same_as(other.reference)
        )


def full_roi(grid: GridSpec) -> Roi:
    return Roi((0, 0, 0), tuple(n - 1 for n in grid.dims), grid)


def roi_from_labels(gt: LabelVolume) -> Roi:
    """Tight bounding box of every voxel with label > 0."""
    zs, ys, xs = np.nonzero(gt.data > 0)
    if xs.size == 0:
        raise EmptyLabelError("Label volume has no foreground voxels")
    return Roi((xs.min(), ys.min(), zs.min()), (xs.max(), ys.max(), zs.max()), gt.grid)


def roi_from_mask(mask: Volume, reference: GridSpec) -> Roi:
    """
    Map a coarse foreground mask onto the reference grid.

    Every foreground voxel contributes its full physical footprint; the ROI is
    the enclosing range of reference indices. No foreground means the full
    reference grid.
    """
    zs, ys, xs = np.nonzero(mask.data > 0)
    if xs.size == 0:
        return full_roi(reference)

    lo = np.array([xs.min(), ys.min(), zs.min()], dtype=np.float64) - 0.5
    hi = np.array([xs.max(), ys.max(), zs.max()], dtype=np.float64) + 0.5
    corners = np.array(list(itertools.product(*zip(lo, hi))))
    coarse = mask.grid
    index = reference.physical_to_index(coarse.index_to_physical(corners))

    upper = np.asarray(reference.dims) - 1
    first = np.clip(np.floor(index.min(axis=0) + INDEX_TOLERANCE), 0, upper).astype(int)
    last = np.clip(np.ceil(index.max(axis=0) - INDEX_TOLERANCE), 0, upper).astype(int)
    last = np.maximum(first, last)
    return Roi(tuple(first), tuple(last), reference)


def pad_roi(
    roi: Roi,
    mode: str = "inference",
    rng: Optional[np.random.Generator] = None,
    pad_voxels: int = ROI_PAD_VOXELS,
    pad_spacing: float = ROI_PAD_SPACING,
) -> Roi:
    """
    Grow each face of the ROI.

    Args:
        roi: ROI in original-image indices
        mode: 'train' draws an independent integer in [0, pad_voxels] per face,
              'inference' uses pad_voxels on every face
        rng: generator, required in train mode
        pad_voxels: padding in segmentation-grid voxels
        pad_spacing: segmentation-grid spacing, mm

    Returns:
        Padded ROI clamped to the image bounds
    """
    if mode == "train":
        if rng is None:
            raise ValueError("pad_roi in train mode needs an rng")
        faces = rng.integers(0, pad_voxels, size=(3, 2), endpoint=True)
    elif mode == "inference":
        faces = np.full((3, 2), pad_voxels)
    else:
        raise ValueError(f"Unknown pad mode: {mode}")

    first, last = [], []
    for axis, (lo, hi, n) in enumerate(zip(roi.min_index, roi.max_index, roi.reference.dims)):
        scale = pad_spacing / roi.reference.spacing[axis]
        below = math.ceil(faces[axis, 0] * scale - INDEX_TOLERANCE)
        above = math.ceil(faces[axis, 1] * scale - INDEX_TOLERANCE)
        first.append(max(0, lo - below))
        last.append(min(n - 1, hi + above))
    return Roi(tuple(first), tuple(last), roi.reference)
