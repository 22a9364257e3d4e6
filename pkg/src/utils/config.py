"""
Flat "key = value" configuration.

One file covers architecture, training, augmentation, phantom and grid
settings. Every key has a default, unknown keys are rejected, and
command-line values override the file.
"""

import os
from typing import Dict, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from src.data.grid import GridBounds
from src.data.phantom import PhantomSpec
from src.features.augment import AugmentParams
from src.models.builders import ArchSpec, build_scn, build_unet
from src.models.losses import LossWeights
from src.models.network import Network
from src.models.train import TrainConfig


class ConfigError(ValueError):
    """Unreadable, unknown or invalid configuration values."""


TUPLE_KEYS = (
    "scale_range", "intensity_scale_range",
    "loc_min_dims", "loc_max_dims", "seg_min_dims", "seg_max_dims",
    "phantom_dims", "phantom_spacing",
)


class Config(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0

    # architecture
    labels: int = 5
    loc_levels: int = 5
    loc_filters: int = 32
    seg_local_levels: int = 5
    seg_local_filters: int = 32
    seg_spatial_levels: int = 4
    seg_spatial_filters: int = 16
    seg_spatial_kernel: int = 5
    spatial_factor: int = 4
    dropout_rate: float = 0.1
    leaky_alpha: float = 0.1

    # optimization
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    iterations: int = 1000
    ema_decay: float = 0.999
    lambda_local: float = 1.0
    lambda_spatial: float = 1.0

    # augmentation
    rotation_degrees: float = 15.0
    translation_mm: float = 10.0
    scale_range: Tuple[float, float] = (0.85, 1.15)
    elastic_grid: int = 8
    elastic_sigma_mm: float = 5.0
    intensity_shift: float = 0.2
    intensity_scale_range: Tuple[float, float] = (0.8, 1.25)

    # preprocessing and grids, dims (x, y, z)
    smoothing_sigma: float = 3.0
    roi_pad_voxels: int = 16
    loc_spacing: float = 6.0
    loc_min_dims: Tuple[int, int, int] = (32, 32, 32)
    loc_max_dims: Tuple[int, int, int] = (80, 80, 256)
    loc_multiple: int = 16
    seg_spacing: float = 2.0
    seg_min_dims: Tuple[int, int, int] = (32, 32, 32)
    seg_max_dims: Tuple[int, int, int] = (160, 128, 160)
    seg_multiple: int = 32

    # phantoms
    phantom_dims: Tuple[int, int, int] = (32, 32, 32)
    phantom_spacing: Tuple[float, float, float] = (6.0, 6.0, 6.0)
    phantom_noise_std: float = 40.0
    phantom_distractors: int = 0
    phantom_center_jitter: float = 0.03
    phantom_radius_jitter: float = 0.1

    # checkpoints
    loc_model: str = ""
    seg_model: str = ""

    @field_validator(*TUPLE_KEYS, mode="before")
    @classmethod
    def _split_tuple(cls, value):
        if isinstance(value, str):
            return tuple(part.strip() for part in value.replace("x", ",").split(",") if part.strip())
        return value

    # -------------------------------------------------------------------------
    # typed sub-configurations
    # -------------------------------------------------------------------------

    def loc_arch(self) -> ArchSpec:
        return ArchSpec(
            levels=self.loc_levels, filters=self.loc_filters, in_channels=1, out_channels=2,
            dropout_rate=self.dropout_rate, leaky_alpha=self.leaky_alpha,
        )

    def seg_local_arch(self) -> ArchSpec:
        return ArchSpec(
            levels=self.seg_local_levels, filters=self.seg_local_filters, in_channels=1, out_channels=self.labels,
            dropout_rate=self.dropout_rate, leaky_alpha=self.leaky_alpha,
        )

    def seg_spatial_arch(self) -> ArchSpec:
        return ArchSpec(
            levels=self.seg_spatial_levels, filters=self.seg_spatial_filters, in_channels=self.labels,
            out_channels=self.labels, kernel_size=self.seg_spatial_kernel,
            dropout_rate=self.dropout_rate, leaky_alpha=self.leaky_alpha,
        )

    def localization_bounds(self) -> GridBounds:
        return GridBounds(
            base_spacing=self.loc_spacing, min_dims=self.loc_min_dims, max_dims=self.loc_max_dims,
            multiple=self.loc_multiple,
        )

    def segmentation_bounds(self) -> GridBounds:
        return GridBounds(
            base_spacing=self.seg_spacing, min_dims=self.seg_min_dims, max_dims=self.seg_max_dims,
            multiple=self.seg_multiple,
        )

    def augment_params(self) -> AugmentParams:
        return AugmentParams(
            rotation_degrees=self.rotation_degrees, translation_mm=self.translation_mm,
            scale_range=self.scale_range, elastic_grid=self.elastic_grid,
            elastic_sigma_mm=self.elastic_sigma_mm, intensity_shift=self.intensity_shift,
            intensity_scale_range=self.intensity_scale_range,
        )

    def phantom_spec(self) -> PhantomSpec:
        return PhantomSpec(
            dims=self.phantom_dims, spacing=self.phantom_spacing, noise_std=self.phantom_noise_std,
            distractors=self.phantom_distractors, center_jitter=self.phantom_center_jitter,
            radius_jitter=self.phantom_radius_jitter,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
            iterations=self.iterations, ema_decay=self.ema_decay, seed=self.seed,
            loss_weights=LossWeights(lambda_local=self.lambda_local, lambda_spatial=self.lambda_spatial),
            augment=self.augment_params(), smoothing_sigma=self.smoothing_sigma,
            roi_pad_voxels=self.roi_pad_voxels,
            localization_bounds=self.localization_bounds(),
            segmentation_bounds=self.segmentation_bounds(),
        )

    def loc_network(self) -> Network:
        return build_unet(self.loc_arch(), seed=self.seed)

    def seg_network(self) -> Network:
        return build_scn(
            self.seg_local_arch(), self.seg_spatial_arch(), labels=self.labels,
            spatial_factor=self.spatial_factor, seed=self.seed,
        )

    def validate_all(self) -> "Config":
        """Build every sub-configuration once so invalid combinations fail early."""
        for build in (self.loc_arch, self.seg_local_arch, self.seg_spatial_arch, self.phantom_spec, self.train_config):
            build()
        return self


def load_config(path: Optional[str] = None, overrides: Optional[Dict] = None) -> Config:
    """
    Read a config file and apply overrides.

    Args:
        path: "key = value" file with "#" comments, or None for defaults
        overrides: values that replace file values; None entries are ignored

    Returns:
        Config with every sub-configuration validated

    Raises:
        FileNotFoundError: path does not exist
        ConfigError: unknown keys or invalid values
    """
    values: Dict = {}
    if path:
        if not os.path.exists(path):
            raise FileNotFoundError(f"File not found: {path}")
        values.update({k: v for k, v in dotenv_values(path).items() if v is not None})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    unknown = sorted(set(values) - set(Config.model_fields))
    if unknown:
        raise ConfigError(f"Unknown config keys: {unknown}")
    try:
        return Config(**values).validate_all()
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration: {exc}") from exc
