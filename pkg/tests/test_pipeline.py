"""
Tests for two-stage inference and checkpoint lookup
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.data.grid import GridBounds
from src.data.phantom import PhantomSpec, generate_phantom
from src.engine.rng import PHANTOM_STREAM, make_rng
from src.features.build_features import segmentation_target
from src.features.roi import pad_roi
from src.models.accounting import count_flops
from src.models.builders import ArchSpec, build_scn, build_unet
from src.serving.inference import find_model, infer, localize, segment

LOC_BOUNDS = GridBounds(base_spacing=24.0, min_dims=(8, 8, 8), max_dims=(8, 8, 8), multiple=8)
SEG_BOUNDS = GridBounds(base_spacing=12.0, min_dims=(8, 8, 8), max_dims=(16, 16, 16), multiple=8)
PAD = 2
SIGMA = 1.0

EXPECTED_TRACE = [
    "normalize",
    "smooth",
    "resample:localization",
    "forward:localization",
    "roi",
    "pad_roi",
    "resample:segmentation",
    "forward:segmentation",
    "resample:original",
]


@pytest.fixture(scope="module")
def case():
    return generate_phantom(PhantomSpec(), make_rng(0, PHANTOM_STREAM, 0))


@pytest.fixture(scope="module")
def nets():
    spec = ArchSpec(levels=2, filters=2, dropout_rate=0.0)
    return build_unet(spec, seed=1), build_scn(spec, spec, labels=5, spatial_factor=2, seed=2)


def _infer(image, nets, **kwargs):
    loc_net, seg_net = nets
    return infer(image, loc_net, seg_net, LOC_BOUNDS, SEG_BOUNDS, SIGMA, PAD, **kwargs)


class TestInfer:
    """Tests for infer, localize and segment."""

    def test_output_congruent_with_input(self, case, nets):
        """Test that labels share dims, spacing, origin and direction with the image."""
        image, _ = case
        labels, _ = _infer(image, nets)
        assert labels.dims == image.dims
        assert labels.spacing == image.spacing
        assert labels.origin == image.origin
        np.testing.assert_array_equal(labels.direction, image.direction)
        assert labels.data.max() <= 4

    def test_background_outside_padded_roi(self, case, nets):
        """Test that every voxel outside the padded ROI is background."""
        image, _ = case
        loc_net, _ = nets
        roi = localize(image, loc_net, LOC_BOUNDS, SIGMA)
        padded = pad_roi(roi, "inference", pad_voxels=PAD, pad_spacing=SEG_BOUNDS.base_spacing)
        labels, _ = _infer(image, nets)
        assert not np.any(labels.data[~padded.mask()])

    def test_stages_compose(self, case, nets):
        """Test that localize then segment reproduce infer."""
        image, _ = case
        loc_net, seg_net = nets
        roi = localize(image, loc_net, LOC_BOUNDS, SIGMA)
        padded = pad_roi(roi, "inference", pad_voxels=PAD, pad_spacing=SEG_BOUNDS.base_spacing)
        staged = segment(image, padded, seg_net, SEG_BOUNDS)
        labels, _ = _infer(image, nets)
        np.testing.assert_array_equal(staged.data, labels.data)

    def test_deterministic(self, case, nets):
        """Test that repeated runs give identical labels."""
        image, _ = case
        a, _ = _infer(image, nets)
        b, _ = _infer(image, nets)
        np.testing.assert_array_equal(a.data, b.data)

    def test_arena_matches_allocating_executor(self, case, nets):
        """Test that arena execution does not change the result."""
        image, _ = case
        arena, stats = _infer(image, nets)
        plain, plain_stats = _infer(image, nets, use_arena=False)
        np.testing.assert_array_equal(arena.data, plain.data)
        assert stats.peak_arena_bytes > 0
        assert plain_stats.peak_arena_bytes == 0

    def test_trace_and_stats(self, case, nets):
        """Test stage order and that FLOPs match the static count."""
        image, _ = case
        loc_net, seg_net = nets
        _, stats = _infer(image, nets)
        assert stats.trace == EXPECTED_TRACE
        assert stats.flops["localization"] == count_flops(loc_net, (8, 8, 8))

        roi = localize(image, loc_net, LOC_BOUNDS, SIGMA)
        padded = pad_roi(roi, "inference", pad_voxels=PAD, pad_spacing=SEG_BOUNDS.base_spacing)
        fine = segmentation_target(padded, seg_net.divisor, SEG_BOUNDS)
        assert stats.flops["segmentation"] == count_flops(seg_net, fine.shape)
        assert stats.total_flops == stats.flops["localization"] + stats.flops["segmentation"]
        keys = [key for key, _ in stats.as_rows()]
        assert "flops_total" in keys and "seconds_total" in keys

    def test_empty_localization_uses_full_image(self, case, nets):
        """Test that an all-background localization falls back to the whole image."""
        image, _ = case
        loc_net = nets[0].copy()
        loc_net.weights["unet/output/bias"] = np.array([100.0, -100.0], dtype=np.float32)
        roi = localize(image, loc_net, LOC_BOUNDS, SIGMA)
        assert roi.min_index == (0, 0, 0)
        assert roi.max_index == tuple(d - 1 for d in image.dims)

    def test_local_head(self, case, nets):
        """Test that the local pathway alone can be used and unknown heads are rejected."""
        image, _ = case
        labels, _ = _infer(image, nets, head="local")
        assert labels.dims == image.dims
        with pytest.raises(ValueError, match="Unknown head"):
            _infer(image, nets, head="spatial")

    def test_skewed_direction_rejected(self, case, nets):
        """Test that a non-orthonormal image direction fails grid validation before resampling."""
        image, _ = case
        skewed = image.with_data(image.data)
        skewed.direction = np.diag([1.0, 2.0, 1.0])
        with pytest.raises(ValueError, match="orthonormal_direction"):
            localize(skewed, nets[0], LOC_BOUNDS, SIGMA)


class TestFindModel:
    """Tests for find_model."""

    def test_explicit_path(self, tmp_path):
        """Test that an existing explicit path is returned as is."""
        path = tmp_path / "loc.scnw"
        path.write_bytes(b"")
        assert find_model("loc", str(path)) == str(path)

    def test_explicit_path_missing(self, tmp_path):
        """Test that a missing explicit path is an error."""
        with pytest.raises(FileNotFoundError, match="File not found"):
            find_model("loc", str(tmp_path / "absent.scnw"))

    def test_environment_directory(self, tmp_path, monkeypatch):
        """Test lookup through $SEG_MODEL_DIR."""
        (tmp_path / "unit_model.scnw").write_bytes(b"")
        monkeypatch.setenv("SEG_MODEL_DIR", str(tmp_path))
        assert find_model("unit_model") == str(tmp_path / "unit_model.scnw")

    def test_nothing_found(self, tmp_path, monkeypatch):
        """Test that the error lists the searched locations."""
        monkeypatch.setenv("SEG_MODEL_DIR", str(tmp_path))
        with pytest.raises(FileNotFoundError, match="Searched locations"):
            find_model("unit_model")
