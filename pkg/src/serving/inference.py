"""
INFERENCE MODULE - two-stage segmentation
=========================================

1. Localization: normalized, smoothed image on the coarse grid -> binary
   foreground -> ROI in original voxel indices.
2. Segmentation: ROI padded by 16 fine voxels per face -> SCN on the fine
   grid -> argmax -> nearest-neighbour resampling back onto the original grid
   with the original metadata.

Checkpoint lookup order for the command line:
1. explicit path (authoritative: a missing file is an error)
2. $SEG_MODEL_DIR/<name>.scnw
3. artifacts/<name>.scnw under the project root
"""

import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from src.data.grid import LOCALIZATION_BOUNDS, SEGMENTATION_BOUNDS, GridBounds
from src.data.preprocess_data import gaussian_smooth, normalize_intensities, resample
from src.data.volume import LabelVolume, Volume
from src.features.build_features import SMOOTHING_SIGMA, localization_target, segmentation_target, to_input
from src.features.roi import ROI_PAD_VOXELS, Roi, pad_roi, roi_from_mask
from src.models.executor import forward
from src.models.memory import plan_memory
from src.models.network import Network
from src.utils.validate_data import validate_grid

HEADS = ("final", "local")


@dataclass
class RunStats:
    seconds: Dict[str, float] = field(default_factory=dict)
    flops: Dict[str, int] = field(default_factory=dict)
    arena_bytes: Dict[str, int] = field(default_factory=dict)
    trace: List[str] = field(default_factory=list)

    @property
    def total_seconds(self) -> float:
        return float(sum(self.seconds.values()))

    @property
    def total_flops(self) -> int:
        return int(sum(self.flops.values()))

    @property
    def peak_arena_bytes(self) -> int:
        return max(self.arena_bytes.values(), default=0)

    def as_rows(self) -> List[tuple]:
        """(key, value) pairs for the stats file."""
        rows = [(f"seconds_{stage}", f"{value:.6f}") for stage, value in self.seconds.items()]
        rows += [(f"flops_{stage}", str(value)) for stage, value in self.flops.items()]
        rows += [(f"arena_bytes_{stage}", str(value)) for stage, value in self.arena_bytes.items()]
        rows += [
            ("seconds_total", f"{self.total_seconds:.6f}"),
            ("flops_total", str(self.total_flops)),
            ("peak_arena_bytes", str(self.peak_arena_bytes)),
        ]
        return rows


def _run(net: Network, x: np.ndarray, stage: str, stats: RunStats, use_arena: bool) -> Dict[str, np.ndarray]:
    plan = plan_memory(net, x.shape[1:], x.dtype) if use_arena else None
    result = forward(net, x, training=False, plan=plan)
    stats.flops[stage] = result.flops
    stats.arena_bytes[stage] = result.arena_bytes
    stats.trace.append(f"forward:{stage}")
    return result.outputs


def _localize_normalized(
    normalized: Volume,
    net: Network,
    stats: RunStats,
    bounds: GridBounds,
    sigma: float,
    use_arena: bool,
) -> Roi:
    smoothed = gaussian_smooth(normalized, sigma)
    stats.trace.append("smooth")
    target = localization_target(normalized, net.divisor, bounds)
    validate_grid(target, bounds.aligned_to(net.divisor), raise_on_fail=True)
    coarse = resample(smoothed, target, "linear")
    stats.trace.append("resample:localization")
    outputs = _run(net, to_input(coarse), "localization", stats, use_arena)
    foreground = coarse.with_data(np.argmax(outputs["final"], axis=0).astype(np.uint8))
    stats.trace.append("roi")
    return roi_from_mask(foreground, normalized.grid)


def _segment_normalized(
    normalized: Volume,
    roi: Roi,
    net: Network,
    stats: RunStats,
    bounds: GridBounds,
    head: str,
    use_arena: bool,
) -> LabelVolume:
    if head not in HEADS:
        raise ValueError(f"Unknown head {head!r}; expected one of {HEADS}")
    target = segmentation_target(roi, net.divisor, bounds)
    validate_grid(target, bounds.aligned_to(net.divisor), raise_on_fail=True)
    fine = resample(normalized, target, "linear")
    stats.trace.append("resample:segmentation")
    outputs = _run(net, to_input(fine), "segmentation", stats, use_arena)
    predicted = LabelVolume.on_grid(np.argmax(outputs[head], axis=0).astype(np.uint8), fine.grid)

    back = resample(predicted, normalized.grid, "nearest")
    stats.trace.append("resample:original")
    data = np.zeros(normalized.grid.shape, dtype=np.uint8)
    inside = roi.mask()
    data[inside] = back.data[inside]
    return LabelVolume(data, normalized.spacing, normalized.origin, normalized.direction.copy())


def localize(
    vol: Volume,
    net: Network,
    bounds: GridBounds = LOCALIZATION_BOUNDS,
    sigma: float = SMOOTHING_SIGMA,
    stats: Optional[RunStats] = None,
    use_arena: bool = True,
) -> Roi:
    """
    ROI of the foreground predicted by the localization network.

    An empty prediction gives the full image.
    """
    stats = stats if stats is not None else RunStats()
    start = time.perf_counter()
    normalized = normalize_intensities(vol)
    stats.trace.append("normalize")
    roi = _localize_normalized(normalized, net, stats, bounds, sigma, use_arena)
    stats.seconds["localization"] = time.perf_counter() - start
    return roi


def segment(
    vol: Volume,
    roi: Roi,
    net: Network,
    bounds: GridBounds = SEGMENTATION_BOUNDS,
    head: str = "final",
    stats: Optional[RunStats] = None,
    use_arena: bool = True,
) -> LabelVolume:
    """
    Organ labels on the original grid; voxels outside the ROI are background.

    Args:
        vol: original image
        roi: (padded) ROI in original voxel indices
        net: SCN
        bounds: segmentation grid bounds
        head: 'final' (combined output) or 'local' (local pathway alone)
    """
    stats = stats if stats is not None else RunStats()
    start = time.perf_counter()
    normalized = normalize_intensities(vol)
    stats.trace.append("normalize")
    labels = _segment_normalized(normalized, roi, net, stats, bounds, head, use_arena)
    stats.seconds["segmentation"] = time.perf_counter() - start
    return labels


def infer(
    vol: Volume,
    loc_net: Network,
    seg_net: Network,
    loc_bounds: GridBounds = LOCALIZATION_BOUNDS,
    seg_bounds: GridBounds = SEGMENTATION_BOUNDS,
    sigma: float = SMOOTHING_SIGMA,
    pad_voxels: int = ROI_PAD_VOXELS,
    head: str = "final",
    use_arena: bool = True,
):
    """
    Full two-stage inference.

    Returns:
        tuple: (LabelVolume congruent with vol, RunStats)
    """
    stats = RunStats()

    start = time.perf_counter()
    normalized = normalize_intensities(vol)
    stats.trace.append("normalize")
    roi = _localize_normalized(normalized, loc_net, stats, loc_bounds, sigma, use_arena)
    stats.seconds["localization"] = time.perf_counter() - start

    start = time.perf_counter()
    padded = pad_roi(roi, "inference", pad_voxels=pad_voxels, pad_spacing=seg_bounds.base_spacing)
    stats.trace.append("pad_roi")
    labels = _segment_normalized(normalized, padded, seg_net, stats, seg_bounds, head, use_arena)
    stats.seconds["segmentation"] = time.perf_counter() - start
    return labels, stats


def find_model(name: str, path: Optional[str] = None) -> str:
    """Resolve a checkpoint path in lookup order."""
    current_dir = os.path.dirname(os.path.abspath(__file__))
    project_root = os.path.abspath(os.path.join(current_dir, "..", ".."))

    if path:
        if not os.path.exists(path):
            raise FileNotFoundError(f"File not found: {path}")
        return path

    candidates = []
    model_dir = os.environ.get("SEG_MODEL_DIR")
    if model_dir:
        candidates.append(os.path.join(model_dir, f"{name}.scnw"))
    candidates.append(os.path.join(project_root, "artifacts", f"{name}.scnw"))

    for candidate in candidates:
        if os.path.exists(candidate):
            return candidate
    raise FileNotFoundError(
        f"No {name} checkpoint found. Searched locations:\n" + "\n".join(f"  - {c}" for c in candidates)
    )
