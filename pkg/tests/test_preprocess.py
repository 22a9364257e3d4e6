"""
Tests for intensity normalization, smoothing and resampling
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.data.preprocess_data import gaussian_kernel, gaussian_smooth, normalize_intensities, resample
from src.data.volume import GridSpec, LabelVolume, Volume


class TestNormalize:
    """Tests for normalize_intensities."""

    def test_scale_and_clip(self):
        """Test division by 2048 and clipping to [-1, 1]."""
        vol = Volume(np.array([[[-4096, -1024, 0, 1024, 2048, 3071]]], dtype=np.int16))
        out = normalize_intensities(vol)
        np.testing.assert_array_equal(out.data[0, 0], np.array([-1.0, -0.5, 0.0, 0.5, 1.0, 1.0], dtype=np.float32))
        assert out.data.dtype == np.float32

    def test_keeps_geometry(self):
        """Test that metadata is carried over."""
        vol = Volume(np.zeros((2, 2, 2), dtype=np.float32), spacing=(1.0, 2.0, 3.0), origin=(4.0, 5.0, 6.0))
        out = normalize_intensities(vol)
        assert out.grid.same_as(vol.grid)


class TestGaussianSmooth:
    """Tests for the separable Gaussian filter."""

    def test_kernel_normalized(self):
        """Test that the kernel sums to one and spans 4 sigma."""
        kernel = gaussian_kernel(3.0)
        assert len(kernel) == 25
        assert kernel.sum() == pytest.approx(1.0)

    def test_impulse_response_centered_and_symmetric(self):
        """Test that a centered impulse gives the separable kernel peak, symmetric about the center."""
        data = np.zeros((33, 33, 33), dtype=np.float32)
        data[16, 16, 16] = 1.0
        out = gaussian_smooth(Volume(data), 3.0).data
        kernel = gaussian_kernel(3.0)
        assert np.unravel_index(np.argmax(out), out.shape) == (16, 16, 16)
        assert out[16, 16, 16] == pytest.approx(kernel[12] ** 3, rel=1e-5)
        for axis in range(3):
            np.testing.assert_allclose(out, np.flip(out, axis), rtol=1e-5, atol=1e-12)
        np.testing.assert_allclose(out, out.transpose(2, 0, 1), rtol=1e-5, atol=1e-12)
        np.testing.assert_allclose(out, out.transpose(1, 0, 2), rtol=1e-5, atol=1e-12)

    def test_constant_volume_unchanged(self):
        """Test that edge replication preserves a constant field."""
        vol = Volume(np.full((6, 7, 8), 0.25, dtype=np.float32))
        np.testing.assert_allclose(gaussian_smooth(vol, 3.0).data, 0.25, atol=1e-6)

    def test_sigma_zero_is_copy(self):
        """Test that sigma 0 returns the data unchanged."""
        vol = Volume(np.random.default_rng(0).normal(size=(3, 4, 5)).astype(np.float32))
        out = gaussian_smooth(vol, 0.0)
        np.testing.assert_array_equal(out.data, vol.data)
        assert out.data is not vol.data

    def test_preserves_mass_away_from_border(self):
        """Test that an interior impulse keeps its total intensity."""
        data = np.zeros((21, 21, 21), dtype=np.float32)
        data[10, 10, 10] = 1.0
        out = gaussian_smooth(Volume(data), 1.0)
        assert out.data.sum() == pytest.approx(1.0, abs=1e-5)
        assert out.data[10, 10, 10] == out.data.max()

    def test_negative_sigma(self):
        """Test that a negative sigma is rejected."""
        with pytest.raises(ValueError):
            gaussian_smooth(Volume(np.zeros((2, 2, 2))), -1.0)


class TestResample:
    """Tests for resample."""

    def test_identity_grid(self):
        """Test that resampling onto the own grid returns the same values."""
        vol = Volume(np.random.default_rng(1).normal(size=(4, 5, 6)).astype(np.float32), spacing=(2.0, 2.0, 3.0))
        out = resample(vol, vol.grid)
        np.testing.assert_array_equal(out.data, vol.data)

    def test_linear_interpolation_is_exact_on_ramps(self):
        """Test that trilinear sampling reproduces a linear ramp at half-voxel shifts."""
        ramp = np.broadcast_to(np.arange(6, dtype=np.float32), (4, 5, 6)).copy()
        vol = Volume(ramp)
        target = GridSpec((5, 5, 4), (1.0, 1.0, 1.0), (0.5, 0.0, 0.0))
        out = resample(vol, target, "linear")
        np.testing.assert_allclose(out.data[0, 0], np.arange(5) + 0.5, atol=1e-6)

    def test_outside_is_padded(self):
        """Test image and label padding outside the source footprint."""
        vol = Volume(np.ones((4, 4, 4), dtype=np.float32))
        labels = LabelVolume(np.full((4, 4, 4), 3, dtype=np.uint8))
        target = GridSpec((4, 4, 4), (1.0, 1.0, 1.0), (100.0, 100.0, 100.0))
        assert np.all(resample(vol, target).data == -1.0)
        assert np.all(resample(labels, target).data == 0)

    def test_labels_use_nearest(self):
        """Test that label resampling never invents values."""
        rng = np.random.default_rng(2)
        labels = LabelVolume(rng.choice([0, 2, 4], size=(6, 6, 6)).astype(np.uint8))
        target = GridSpec((9, 9, 9), (0.6, 0.6, 0.6), (0.1, 0.2, 0.3))
        out = resample(labels, target, "linear")
        assert isinstance(out, LabelVolume)
        assert set(np.unique(out.data)) <= {0, 2, 4}

    def test_unknown_interpolation(self):
        """Test that unknown interpolation modes are rejected."""
        vol = Volume(np.zeros((2, 2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            resample(vol, vol.grid, "cubic")
