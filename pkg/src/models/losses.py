"""
Losses with analytic gradients.

Localization: generalized Dice on the softmax output. Segmentation: generalized
Dice on the combined output plus weighted cross-entropy on the local and the
spatial logits.
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import special

from src.engine.ops import ShapeError

GDL_EPSILON = 1e-5


class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda_local: float = Field(1.0, ge=0.0, allow_inf_nan=False)
    lambda_spatial: float = Field(1.0, ge=0.0, allow_inf_nan=False)


@dataclass
class LossTerms:
    total: float
    gd: float
    ce_local: float = 0.0
    ce_spatial: float = 0.0


def _check_pair(gt: np.ndarray, pred: np.ndarray):
    if gt.shape != pred.shape:
        raise ShapeError(f"ground truth {gt.shape} and prediction {pred.shape} differ")
    if gt.ndim != 4:
        raise ShapeError(f"expected [C, Z, Y, X], got {gt.shape}")


def generalized_dice_loss(gt: np.ndarray, prob: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    L = 1 - 2 * sum_c w_c I_c / sum_c w_c U_c with
    I_c = sum_v gt * prob, U_c = sum_v (gt + prob), w_c = 1 / (sum_v gt + eps)^2.

    Returns:
        tuple: (loss, gradient with respect to prob)
    """
    _check_pair(gt, prob)
    axes = (1, 2, 3)
    g = gt.astype(np.float64)
    p = prob.astype(np.float64)
    weights = 1.0 / (g.sum(axis=axes) + GDL_EPSILON) ** 2
    intersection = float(np.sum(weights * (g * p).sum(axis=axes)))
    union = float(np.sum(weights * (g + p).sum(axis=axes)))

    loss = 1.0 - 2.0 * intersection / union
    w = weights.reshape(-1, 1, 1, 1)
    grad = -2.0 * w * (g * union - intersection) / union ** 2
    return loss, grad.astype(prob.dtype)


def cross_entropy_loss(gt: np.ndarray, logits: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Voxel-mean cross-entropy of the channel softmax of logits.

    Returns:
        tuple: (loss, gradient with respect to logits)
    """
    _check_pair(gt, logits)
    voxels = int(np.prod(logits.shape[1:]))
    log_prob = special.log_softmax(logits.astype(np.float64), axis=0)
    loss = float(-np.sum(gt * log_prob) / voxels)
    grad = (np.exp(log_prob) - gt) / voxels
    return loss, grad.astype(logits.dtype)


def localization_loss(gt: np.ndarray, prob: np.ndarray) -> Tuple[LossTerms, Dict[str, np.ndarray]]:
    loss, grad = generalized_dice_loss(gt, prob)
    return LossTerms(total=loss, gd=loss), {"final": grad}


def scn_loss(
    gt: np.ndarray,
    final_prob: np.ndarray,
    local_logits: np.ndarray,
    spatial_logits: np.ndarray,
    weights: LossWeights = LossWeights(),
) -> Tuple[LossTerms, Dict[str, np.ndarray]]:
    """
    Generalized Dice on the final head plus weighted cross-entropy on the
    local and spatial heads.

    Returns:
        tuple: (LossTerms, gradients keyed by head name: final, local, spatial)
    """
    gd, grad_final = generalized_dice_loss(gt, final_prob)
    ce_local, grad_local = cross_entropy_loss(gt, local_logits)
    ce_spatial, grad_spatial = cross_entropy_loss(gt, spatial_logits)

    total = gd + weights.lambda_local * ce_local + weights.lambda_spatial * ce_spatial
    grads = {
        "final": grad_final,
        "local": grad_local * local_logits.dtype.type(weights.lambda_local),
        "spatial": grad_spatial * spatial_logits.dtype.type(weights.lambda_spatial),
    }
    return LossTerms(total=total, gd=gd, ce_local=ce_local, ce_spatial=ce_spatial), grads
