"""
Network inputs and targets for both stages.

Localization sees the normalized, smoothed image on the coarse grid; the SCN
sees the normalized image on the fine grid around the (padded) ROI.
"""

from typing import Tuple

import numpy as np

from src.data.grid import LOCALIZATION_BOUNDS, SEGMENTATION_BOUNDS, GridBounds, localization_grid, segmentation_grid
from src.data.preprocess_data import gaussian_smooth, normalize_intensities
from src.data.volume import GridSpec, LabelVolume, Volume
from src.engine.ops import one_hot
from src.features.augment import AugmentParams, augment
from src.features.roi import ROI_PAD_VOXELS, Roi, pad_roi, roi_from_labels

SMOOTHING_SIGMA = 3.0
OBJECTIVES = ("loc", "seg")


def localization_target(vol: Volume, divisor: int, bounds: GridBounds = LOCALIZATION_BOUNDS) -> GridSpec:
    return localization_grid(vol, bounds.aligned_to(divisor))


def segmentation_target(roi: Roi, divisor: int, bounds: GridBounds = SEGMENTATION_BOUNDS) -> GridSpec:
    return segmentation_grid(roi, bounds.aligned_to(divisor))


def to_input(vol: Volume) -> np.ndarray:
    """Single-channel activation [1, Z, Y, X]."""
    return vol.data.astype(np.float32)[None]


def binary_target(labels: LabelVolume) -> np.ndarray:
    return one_hot(labels.data > 0, 2)


def label_target(labels: LabelVolume, classes: int) -> np.ndarray:
    return one_hot(labels.data, classes)


def training_sample(
    image: Volume,
    labels: LabelVolume,
    objective: str,
    classes: int,
    divisor: int,
    augment_params: AugmentParams,
    augment_rng: np.random.Generator,
    padding_rng: np.random.Generator,
    loc_bounds: GridBounds = LOCALIZATION_BOUNDS,
    seg_bounds: GridBounds = SEGMENTATION_BOUNDS,
    sigma: float = SMOOTHING_SIGMA,
    pad_voxels: int = ROI_PAD_VOXELS,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    One (input, one-hot target) pair.

    loc: whole image on the localization grid, binary foreground target.
    seg: ground-truth ROI with random face padding on the segmentation grid,
    per-organ target. Augmentation resamples straight onto the target grid.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"Unknown objective {objective!r}; expected one of {OBJECTIVES}")
    normalized = normalize_intensities(image)

    if objective == "loc":
        source = gaussian_smooth(normalized, sigma)
        target = localization_target(image, divisor, loc_bounds)
        x, y = augment(source, labels, augment_params, augment_rng, target)
        return to_input(x), binary_target(y)

    roi = pad_roi(roi_from_labels(labels), "train", padding_rng, pad_voxels, seg_bounds.base_spacing)
    target = segmentation_target(roi, divisor, seg_bounds)
    x, y = augment(normalized, labels, augment_params, augment_rng, target)
    return to_input(x), label_target(y, classes)
