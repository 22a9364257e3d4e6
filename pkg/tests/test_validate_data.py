"""
Tests for data validation and case manifests
"""

import os
import sys

import numpy as np
import pandas as pd
import pytest

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.data.grid import LOCALIZATION_BOUNDS, localization_grid
from src.data.load_data import kfold_splits, load_manifest, save_case, write_manifest
from src.data.volume import GridSpec, LabelVolume, Volume
from src.utils.validate_data import validate_grid, validate_label_volume, validate_manifest, validate_volume


def _image(shape=(4, 4, 4)) -> Volume:
    return Volume(np.zeros(shape, dtype=np.float32), spacing=(1.0, 1.0, 1.0))


class TestValidateVolume:
    """Tests for validate_volume and validate_label_volume."""

    def test_valid_volume(self):
        """Test that a clean volume passes every check."""
        report = validate_volume(_image())
        assert report['success']
        assert report['failed'] == 0

    def test_non_finite(self):
        """Test that NaN voxels fail and can raise."""
        data = np.zeros((2, 2, 2), dtype=np.float32)
        data[0, 0, 0] = np.nan
        report = validate_volume(Volume(data))
        assert not report['success']
        assert report['failed_tests'][0]['test'] == 'finite_values'
        with pytest.raises(ValueError, match="finite_values"):
            validate_volume(Volume(data), raise_on_fail=True)

    def test_label_range(self):
        """Test that labels above the maximum fail."""
        labels = LabelVolume(np.full((2, 2, 2), 7, dtype=np.uint8))
        assert not validate_label_volume(labels)['success']
        assert validate_label_volume(labels, max_label=7)['success']

    def test_label_grid_must_match_image(self):
        """Test the congruent grid check against a reference image."""
        labels = LabelVolume(np.zeros((4, 4, 4), dtype=np.uint8), spacing=(2.0, 1.0, 1.0))
        report = validate_label_volume(labels, reference=_image())
        assert [t['test'] for t in report['failed_tests']] == ['congruent_grid']


class TestValidateGrid:
    """Tests for validate_grid."""

    def test_solved_grid_passes(self):
        """Test that a solved localization grid satisfies its bounds."""
        vol = Volume(np.zeros((100, 120, 140), dtype=np.float32), spacing=(1.5, 1.5, 2.5))
        assert validate_grid(localization_grid(vol), LOCALIZATION_BOUNDS)['success']

    def test_out_of_bounds(self):
        """Test that small, indivisible dims fail."""
        report = validate_grid(GridSpec((30, 32, 32), (6.0, 6.0, 6.0)), LOCALIZATION_BOUNDS)
        failed = {t['test'] for t in report['failed_tests']}
        assert failed == {'dims_within_bounds', 'dims_multiple'}


class TestManifest:
    """Tests for manifests, case loading and fold splits."""

    def _write_cases(self, root, names):
        for name in names:
            image = Volume(np.zeros((2, 2, 2), dtype=np.int16))
            save_case(str(root), name, image, LabelVolume(np.zeros((2, 2, 2), dtype=np.uint8)))
        return write_manifest(str(root), names)

    def test_manifest_roundtrip(self, tmp_path):
        """Test that written manifests validate and load."""
        path = self._write_cases(tmp_path, ["000", "001"])
        df = pd.read_csv(path, dtype=str)
        assert validate_manifest(df, str(tmp_path))['success']
        cases = load_manifest(str(tmp_path))
        assert [c.name for c in cases] == ["000", "001"]
        image, labels = cases[1].load()
        assert image.data.dtype == np.float32
        assert isinstance(labels, LabelVolume)

    def test_missing_files_and_duplicates(self, tmp_path):
        """Test that absent files and repeated case names fail."""
        df = pd.DataFrame({"case": ["a", "a"], "image": ["x.mha", "y.mha"], "label": ["x.mha", "y.mha"]})
        report = validate_manifest(df, str(tmp_path))
        failed = {t['test'] for t in report['failed_tests']}
        assert failed == {'unique_values', 'files_exist'}

    def test_missing_column(self):
        """Test that a manifest without a label column fails."""
        report = validate_manifest(pd.DataFrame({"case": ["a"], "image": ["x.mha"]}))
        assert any(t['test'] == 'column_exists' for t in report['failed_tests'])

    def test_missing_manifest(self, tmp_path):
        """Test that a directory without manifest raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            load_manifest(str(tmp_path))

    def test_kfold_partitions(self):
        """Test that folds are deterministic and partition the cases."""
        splits = kfold_splits(10, 4, seed=3)
        assert len(splits) == 4
        held_out = np.sort(np.concatenate([h for _, h in splits]))
        np.testing.assert_array_equal(held_out, np.arange(10))
        for train, held in splits:
            assert not set(train) & set(held)
        again = kfold_splits(10, 4, seed=3)
        assert all(np.array_equal(a[1], b[1]) for a, b in zip(splits, again))

    def test_kfold_errors(self):
        """Test fold count validation."""
        with pytest.raises(ValueError):
            kfold_splits(10, 1)
        with pytest.raises(ValueError):
            kfold_splits(3, 4)
