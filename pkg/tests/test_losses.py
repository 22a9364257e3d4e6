"""
Tests for the generalized Dice, cross-entropy and SCN losses
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.engine.gradcheck import numerical_gradient, relative_error
from src.engine.ops import ShapeError, one_hot
from src.models.losses import LossWeights, cross_entropy_loss, generalized_dice_loss, localization_loss, scn_loss


def _random_case(seed: int, classes: int = 3, dims=(3, 3, 3)):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=dims)
    labels.reshape(-1)[:classes] = np.arange(classes)
    gt = one_hot(labels, classes, np.float64)
    prob = rng.dirichlet(np.ones(classes), size=dims).transpose(3, 0, 1, 2)
    return rng, gt, prob


class TestGeneralizedDice:
    """Tests for generalized_dice_loss."""

    def test_perfect_overlap(self):
        """Test that prob == gt gives zero loss."""
        _, gt, _ = _random_case(0)
        loss, _ = generalized_dice_loss(gt, gt.copy())
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_hand_computed_value(self):
        """Test 2 classes, 2 voxels, uniform 0.5 prediction."""
        gt = np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(2, 1, 1, 2)
        loss, _ = generalized_dice_loss(gt, np.full_like(gt, 0.5))
        assert loss == pytest.approx(0.5)

    def test_disjoint_prediction(self):
        """Test that a prediction missing every label gives loss one."""
        gt = np.array([[1.0, 1.0], [0.0, 0.0]]).reshape(2, 1, 1, 2)
        prob = np.array([[0.0, 0.0], [1.0, 1.0]]).reshape(2, 1, 1, 2)
        assert generalized_dice_loss(gt, prob)[0] == pytest.approx(1.0)

    def test_gradient(self):
        """Test the analytic gradient against central differences in float64."""
        for seed in range(100):
            _, gt, prob = _random_case(seed)
            _, grad = generalized_dice_loss(gt, prob)
            numeric = numerical_gradient(lambda p: generalized_dice_loss(gt, p)[0], prob)
            assert relative_error(grad, numeric) < 1e-5

    def test_label_permutation_invariance(self):
        """Test that relabeling the classes consistently in gt and prob leaves the loss unchanged."""
        for seed in range(10):
            rng, gt, prob = _random_case(seed, classes=4)
            order = rng.permutation(4)
            loss, _ = generalized_dice_loss(gt, prob)
            assert generalized_dice_loss(gt[order], prob[order])[0] == pytest.approx(loss, rel=1e-12)

    def test_voxel_permutation_invariance(self):
        """Test that shuffling voxels identically in gt and prob leaves the loss unchanged."""
        rng, gt, prob = _random_case(7)
        order = rng.permutation(gt[0].size)
        shuffled_gt = gt.reshape(3, -1)[:, order].reshape(gt.shape)
        shuffled_prob = prob.reshape(3, -1)[:, order].reshape(prob.shape)
        loss, _ = generalized_dice_loss(gt, prob)
        assert generalized_dice_loss(shuffled_gt, shuffled_prob)[0] == pytest.approx(loss, rel=1e-12)

    def test_shape_mismatch(self):
        """Test that mismatched shapes raise ShapeError."""
        with pytest.raises(ShapeError):
            generalized_dice_loss(np.zeros((2, 2, 2, 2)), np.zeros((3, 2, 2, 2)))


class TestCrossEntropy:
    """Tests for cross_entropy_loss."""

    def test_uniform_logits(self):
        """Test ln 5 for uniform logits over five classes."""
        gt = one_hot(np.zeros((2, 2, 2), dtype=int), 5, np.float64)
        loss, _ = cross_entropy_loss(gt, np.zeros((5, 2, 2, 2)))
        assert loss == pytest.approx(np.log(5.0))

    def test_large_logit_is_stable(self):
        """Test a +1000 logit on the true class without overflow."""
        gt = one_hot(np.array([[[2]]]), 3, np.float64)
        logits = np.zeros((3, 1, 1, 1))
        logits[2] = 1000.0
        loss, grad = cross_entropy_loss(gt, logits)
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(grad))

    def test_gradient(self):
        """Test the analytic gradient against central differences in float64."""
        for seed in range(100):
            rng, gt, _ = _random_case(seed)
            logits = rng.normal(size=gt.shape) * 2
            _, grad = cross_entropy_loss(gt, logits)
            numeric = numerical_gradient(lambda v: cross_entropy_loss(gt, v)[0], logits)
            assert relative_error(grad, numeric) < 1e-6


class TestCombinedLosses:
    """Tests for localization_loss and scn_loss."""

    def test_localization_is_dice(self):
        """Test that the localization loss is generalized Dice on the final head."""
        _, gt, prob = _random_case(1, classes=2)
        terms, grads = localization_loss(gt, prob)
        loss, grad = generalized_dice_loss(gt, prob)
        assert terms.total == terms.gd == loss
        np.testing.assert_array_equal(grads["final"], grad)

    def test_zero_weights_equal_dice(self):
        """Test that lambda 0 removes both cross-entropy terms."""
        rng, gt, prob = _random_case(2, classes=5)
        local, spatial = rng.normal(size=gt.shape), rng.normal(size=gt.shape)
        terms, grads = scn_loss(gt, prob, local, spatial, LossWeights(lambda_local=0.0, lambda_spatial=0.0))
        assert terms.total == generalized_dice_loss(gt, prob)[0]
        assert not np.any(grads["local"]) and not np.any(grads["spatial"])

    def test_perfect_predictions(self):
        """Test that perfect heads give zero total loss."""
        _, gt, _ = _random_case(3, classes=5)
        confident = (gt * 2 - 1) * 1000.0
        terms, _ = scn_loss(gt, gt.copy(), confident, confident)
        assert terms.total == pytest.approx(0.0, abs=1e-9)

    def test_sum_of_terms(self):
        """Test that the total is the weighted sum of independently computed terms."""
        rng, gt, prob = _random_case(4, classes=5)
        local, spatial = rng.normal(size=gt.shape), rng.normal(size=gt.shape)
        weights = LossWeights(lambda_local=0.7, lambda_spatial=1.3)
        terms, grads = scn_loss(gt, prob, local, spatial, weights)
        expected = (
            generalized_dice_loss(gt, prob)[0]
            + 0.7 * cross_entropy_loss(gt, local)[0]
            + 1.3 * cross_entropy_loss(gt, spatial)[0]
        )
        assert terms.total == pytest.approx(expected, abs=1e-7)
        np.testing.assert_allclose(grads["spatial"], 1.3 * cross_entropy_loss(gt, spatial)[1])

    def test_negative_weight_rejected(self):
        """Test that loss weights must be non-negative."""
        with pytest.raises(ValueError):
            LossWeights(lambda_local=-1.0)
