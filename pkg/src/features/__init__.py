from src.features.roi import EmptyLabelError, Roi, full_roi, roi_from_labels, roi_from_mask, pad_roi
from src.features.augment import AugmentParams, sample_transform, apply_transform, augment
from src.features.build_features import localization_target, segmentation_target, training_sample

__all__ = [
    'EmptyLabelError',
    'Roi',
    'full_roi',
    'roi_from_labels',
    'roi_from_mask',
    'pad_roi',
    'AugmentParams',
    'sample_transform',
    'apply_transform',
    'augment',
    'localization_target',
    'segmentation_target',
    'training_sample'
]
