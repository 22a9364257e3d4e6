"""
Training loop: Adam with a constant learning rate, EMA of the weights,
mini-batch size 1, random augmentation, loss-curve log and mlflow metrics.
"""

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import mlflow
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from src.data.grid import LOCALIZATION_BOUNDS, SEGMENTATION_BOUNDS, GridBounds
from src.data.volume import LabelVolume, Volume
from src.engine.rng import AUGMENT_STREAM, DROPOUT_STREAM, PADDING_STREAM, SAMPLING_STREAM, make_rng
from src.features.augment import AugmentParams
from src.features.build_features import OBJECTIVES, SMOOTHING_SIGMA, training_sample
from src.features.roi import ROI_PAD_VOXELS
from src.models.checkpoint import save_weights
from src.models.executor import backward, forward
from src.models.losses import LossTerms, LossWeights, localization_loss, scn_loss
from src.models.network import Network


class TrainingDivergedError(RuntimeError):
    """Non-finite loss or weights during training."""

    def __init__(self, message: str, iteration: int, terms: Optional[LossTerms] = None, snapshot: Optional[str] = None):
        super().__init__(message)
        self.iteration = iteration
        self.terms = terms
        self.snapshot = snapshot


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(1e-4, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_epsilon: float = Field(1e-8, gt=0.0)
    iterations: int = Field(1000, ge=1)
    loss_weights: LossWeights = LossWeights()
    ema_decay: float = Field(0.999, ge=0.0, le=1.0)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    augment: AugmentParams = AugmentParams()
    smoothing_sigma: float = Field(SMOOTHING_SIGMA, ge=0.0)
    roi_pad_voxels: int = Field(ROI_PAD_VOXELS, ge=0)
    localization_bounds: GridBounds = LOCALIZATION_BOUNDS
    segmentation_bounds: GridBounds = SEGMENTATION_BOUNDS


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, weights: Dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(w) for k, w in weights.items()}, {k: np.zeros_like(w) for k, w in weights.items()})


def adam_step(
    weights: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState, cfg: TrainConfig
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for name, w in weights.items():
        g = grads[name]
        if g.shape != w.shape or state.m[name].shape != w.shape:
            raise ValueError(f"Shape mismatch for {name}: weight {w.shape}, grad {g.shape}, state {state.m[name].shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        w -= (cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)).astype(w.dtype)
    return weights, state


def ema_update(ema: Dict[str, np.ndarray], weights: Dict[str, np.ndarray], decay: float) -> Dict[str, np.ndarray]:
    """ema <- decay * ema + (1 - decay) * weights"""
    for name, w in weights.items():
        ema[name] = (decay * ema[name] + (1.0 - decay) * w).astype(w.dtype)
    return ema


@dataclass
class TrainResult:
    net: Network
    ema: Dict[str, np.ndarray]
    history: List[LossTerms] = field(default_factory=list)

    def ema_network(self) -> Network:
        averaged = self.net.copy()
        for name in averaged.weights:
            averaged.weights[name] = self.ema[name].copy()
        return averaged


def _log_line(iteration: int, terms: LossTerms) -> str:
    return f"{iteration}\t{terms.total:.8g}\t{terms.gd:.8g}\t{terms.ce_local:.8g}\t{terms.ce_spatial:.8g}\n"


def _diverged(net: Network, iteration: int, terms: LossTerms, checkpoint_path: Optional[str], reason: str):
    snapshot = None
    if checkpoint_path:
        snapshot = f"{checkpoint_path}.diverged-{iteration}"
        save_weights(net, snapshot)
    raise TrainingDivergedError(
        f"Training diverged at iteration {iteration}: {reason} "
        f"(loss={terms.total}, gd={terms.gd}, ce_local={terms.ce_local}, ce_spatial={terms.ce_spatial})"
        + (f"; weights saved to {snapshot}" if snapshot else ""),
        iteration, terms, snapshot,
    )


def train_model(
    dataset: Sequence[Tuple[Volume, LabelVolume]],
    net: Network,
    cfg: TrainConfig,
    objective: str = "loc",
    log_path: Optional[str] = None,
    checkpoint_path: Optional[str] = None,
    progress: bool = False,
) -> TrainResult:
    """
    Train a network on (image, labels) pairs.

    Args:
        dataset: cases to sample from, uniformly with replacement
        net: 'unet' for objective 'loc' (generalized Dice), 'scn' for 'seg'
             (generalized Dice plus weighted cross-entropy on both pathways)
        cfg: hyperparameters
        objective: 'loc' or 'seg'
        log_path: loss-curve TSV, appended one line per iteration
        checkpoint_path: final checkpoint with raw and EMA weights
        progress: show a progress bar

    Returns:
        TrainResult holding the trained network, EMA weights and loss history

    Raises:
        TrainingDivergedError: non-finite loss or weights
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"Unknown objective {objective!r}; expected one of {OBJECTIVES}")
    if not dataset:
        raise ValueError("Training needs at least one case")
    expected = "unet" if objective == "loc" else "scn"
    if net.kind != expected:
        raise ValueError(f"Objective {objective!r} trains a {expected} network, got {net.kind}")

    classes = _output_channels(net)
    state = AdamState.zeros_like(net.weights)
    ema = {name: w.copy() for name, w in net.weights.items()}
    history: List[LossTerms] = []
    tracking = mlflow.active_run() is not None

    log = None
    if log_path:
        os.makedirs(os.path.dirname(os.path.abspath(log_path)), exist_ok=True)
        log = open(log_path, "a")
    try:
        for iteration in tqdm(range(1, cfg.iterations + 1), disable=not progress, desc=f"train {objective}"):
            index = int(make_rng(cfg.seed, SAMPLING_STREAM, iteration).integers(len(dataset)))
            image, labels = dataset[index]
            x, gt = training_sample(
                image, labels, objective, classes, net.divisor, cfg.augment,
                make_rng(cfg.seed, AUGMENT_STREAM, iteration),
                make_rng(cfg.seed, PADDING_STREAM, iteration),
                cfg.localization_bounds, cfg.segmentation_bounds, cfg.smoothing_sigma, cfg.roi_pad_voxels,
            )

            result = forward(net, x, training=True, rng=make_rng(cfg.seed, DROPOUT_STREAM, iteration))
            if objective == "loc":
                terms, head_grads = localization_loss(gt, result.outputs["final"])
            else:
                terms, head_grads = scn_loss(
                    gt, result.outputs["final"], result.outputs["local"], result.outputs["spatial"], cfg.loss_weights
                )
            if not np.isfinite(terms.total):
                _diverged(net, iteration, terms, checkpoint_path, "non-finite loss")

            grads = backward(net, result, head_grads)
            adam_step(net.weights, grads, state, cfg)
            if not all(np.all(np.isfinite(w)) for w in net.weights.values()):
                _diverged(net, iteration, terms, checkpoint_path, "non-finite weights")
            ema_update(ema, net.weights, cfg.ema_decay)

            history.append(terms)
            if log:
                log.write(_log_line(iteration, terms))
                log.flush()
            if tracking:
                mlflow.log_metrics(
                    {"loss": terms.total, "loss_gd": terms.gd, "loss_ce_local": terms.ce_local,
                     "loss_ce_spatial": terms.ce_spatial},
                    step=iteration,
                )
    finally:
        if log:
            log.close()

    if checkpoint_path:
        save_weights(net, checkpoint_path, ema)
    return TrainResult(net, ema, history)


def _output_channels(net: Network) -> int:
    """Class count: width of the last convolution in topological order."""
    for node in reversed(net.nodes):
        if node.op == "conv":
            return node.attrs["out_channels"]
    raise ValueError("Network has no convolution")
