from src.utils.validate_data import (
    validate_volume,
    validate_label_volume,
    validate_grid,
    validate_manifest
)
from src.utils.config import Config, ConfigError, load_config

__all__ = [
    'validate_volume',
    'validate_label_volume',
    'validate_grid',
    'validate_manifest',
    'Config',
    'ConfigError',
    'load_config'
]
