from src.data.volume import GridSpec, Volume, LabelVolume, direction_is_orthonormal
from src.data.metaimage import MetaImageError, read_metaimage, write_metaimage
from src.data.preprocess_data import normalize_intensities, gaussian_smooth, resample
from src.data.grid import GridError, GridBounds, LOCALIZATION_BOUNDS, SEGMENTATION_BOUNDS, solve_dims, localization_grid, segmentation_grid
from src.data.load_data import Case, load_data, load_manifest, write_manifest, save_case, load_dataset, kfold_splits
from src.data.phantom import OrganSpec, PhantomSpec, PhantomSpecError, generate_phantom

__all__ = [
    'GridSpec',
    'Volume',
    'LabelVolume',
    'direction_is_orthonormal',
    'MetaImageError',
    'read_metaimage',
    'write_metaimage',
    'normalize_intensities',
    'gaussian_smooth',
    'resample',
    'GridError',
    'GridBounds',
    'LOCALIZATION_BOUNDS',
    'SEGMENTATION_BOUNDS',
    'solve_dims',
    'localization_grid',
    'segmentation_grid',
    'Case',
    'load_data',
    'load_manifest',
    'write_manifest',
    'save_case',
    'load_dataset',
    'kfold_splits',
    'OrganSpec',
    'PhantomSpec',
    'PhantomSpecError',
    'generate_phantom'
]
