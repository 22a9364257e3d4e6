import numpy as np
from scipy import ndimage

from src.data.volume import GridSpec, LabelVolume, Volume

HU_SCALE = 2048.0
IMAGE_PAD_VALUE = -1.0
LABEL_PAD_VALUE = 0


def normalize_intensities(vol: Volume) -> Volume:
    """
    - Divide by 2048 and clip to [-1, 1]
    - No per-image statistics
    """
    data = np.clip(vol.data.astype(np.float32) / np.float32(HU_SCALE), -1.0, 1.0)
    return vol.with_data(data.astype(np.float32))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1D Gaussian truncated at 4 sigma and renormalized to sum 1."""
    radius = int(np.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def gaussian_smooth(vol: Volume, sigma: float) -> Volume:
    """
    - Separable Gaussian per axis, sigma in voxels
    - Edge replication at the borders
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return vol.with_data(vol.data.copy())

    kernel = gaussian_kernel(sigma)
    data = vol.data.astype(np.float64)
    for axis in range(3):
        data = ndimage.correlate1d(data, kernel, axis=axis, mode="nearest")
    return vol.with_data(data.astype(np.float32))


def source_coordinates(source: GridSpec, points: np.ndarray) -> np.ndarray:
    """Continuous source array coordinates (z, y, x rows) of physical points (N, 3)."""
    index = source.physical_to_index(points)
    return index[:, ::-1].T


def grid_points(target: GridSpec) -> np.ndarray:
    """Physical positions of every target voxel, shape (N, 3), x fastest."""
    nx, ny, nz = target.dims
    zz, yy, xx = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    index = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
    return target.index_to_physical(index)


def sample_at(vol: Volume, coords: np.ndarray, order: int, pad_value: float) -> np.ndarray:
    """
    Sample vol at continuous array coordinates (3, N).

    Positions outside the voxel footprints of the source get pad_value; inside
    the footprint the edge voxels are replicated.
    """
    shape = np.asarray(vol.data.shape, dtype=np.float64)[:, None]
    outside = np.any((coords < -0.5) | (coords > shape - 0.5), axis=0)
    if isinstance(vol, LabelVolume):
        values = ndimage.map_coordinates(vol.data, coords, order=0, mode="nearest", output=np.uint8)
    else:
        values = ndimage.map_coordinates(
            vol.data.astype(np.float32), coords, order=order, mode="nearest", output=np.float32
        )
    values[outside] = pad_value
    return values


def resample(vol: Volume, target: GridSpec, interp: str = "linear", pad_value: float = None) -> Volume:
    """
    Resample vol onto target.

    Args:
        vol: source Volume or LabelVolume
        target: output grid
        interp: 'linear' or 'nearest'; labels always use nearest
        pad_value: value outside the source; defaults to -1 for images, 0 for labels

    Returns:
        Volume (or LabelVolume) on the target grid
    """
    if interp not in ("linear", "nearest"):
        raise ValueError(f"Unknown interpolation: {interp}")
    if min(target.spacing) <= 0:
        raise ValueError(f"Target spacing must be positive, got {target.spacing}")

    is_label = isinstance(vol, LabelVolume)
    if pad_value is None:
        pad_value = LABEL_PAD_VALUE if is_label else IMAGE_PAD_VALUE

    if vol.grid.same_as(target):
        return vol.with_data(vol.data.copy())

    coords = source_coordinates(vol.grid, grid_points(target))
    order = 0 if (is_label or interp == "nearest") else 1
    values = sample_at(vol, coords, order, pad_value).reshape(target.shape)
    return type(vol).on_grid(values, target)
