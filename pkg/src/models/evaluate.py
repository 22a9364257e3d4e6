"""
Segmentation metrics: Dice similarity coefficient, normalized surface
distance, spurious connected components, and the per-organ report.
"""

import os
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import ndimage

from src.data.volume import LabelVolume

ORGANS: Dict[str, Tuple[int, ...]] = {
    "Liver": (1,),
    "Kidney": (2,),
    "Spleen": (3,),
    "Pancreas": (4,),
}
NSD_TOLERANCE_MM = 1.0

Label = Union[int, Sequence[int]]

FACE_CONNECTIVITY = ndimage.generate_binary_structure(3, 1)
FULL_CONNECTIVITY = ndimage.generate_binary_structure(3, 3)


class GridMismatchError(ValueError):
    """Ground truth and prediction live on different grids."""


def _check_congruent(gt: LabelVolume, pred: LabelVolume):
    if not gt.grid.same_as(pred.grid):
        raise GridMismatchError(
            f"Grids differ: dims {gt.dims} vs {pred.dims}, spacing {gt.spacing} vs {pred.spacing}, "
            f"origin {gt.origin} vs {pred.origin}"
        )


def label_mask(vol: LabelVolume, label: Label) -> np.ndarray:
    """Voxels carrying the label (or any of a group of labels)."""
    values = (label,) if np.isscalar(label) else tuple(label)
    return np.isin(vol.data, values)


def dsc(gt: LabelVolume, pred: LabelVolume, label: Label) -> float:
    """2|G ∩ P| / (|G| + |P|); 1.0 when both masks are empty."""
    _check_congruent(gt, pred)
    g, p = label_mask(gt, label), label_mask(pred, label)
    total = int(g.sum()) + int(p.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(g, p).sum()) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with at least one face neighbour outside the mask (or the array)."""
    return mask & ~ndimage.binary_erosion(mask, structure=FACE_CONNECTIVITY, border_value=0)


def _within(source: np.ndarray, target: np.ndarray, spacing_zyx: np.ndarray, tau: float) -> int:
    """Number of source voxels whose nearest target voxel lies within tau mm."""
    _, nearest = ndimage.distance_transform_edt(~target, sampling=spacing_zyx, return_indices=True)
    points = np.nonzero(source)
    offsets = np.stack([(nearest[axis][points] - points[axis]) * spacing_zyx[axis] for axis in range(3)])
    return int(np.count_nonzero(np.sum(offsets ** 2, axis=0) <= tau * tau))


def nsd(gt: LabelVolume, pred: LabelVolume, label: Label, tau_mm: float = NSD_TOLERANCE_MM) -> float:
    """
    Symmetric normalized surface distance at tolerance tau_mm.

    Returns:
        float: fraction of both boundary sets lying within tau of the other;
        1.0 when both masks are empty, 0.0 when exactly one is
    """
    _check_congruent(gt, pred)
    g, p = label_mask(gt, label), label_mask(pred, label)
    if not g.any() and not p.any():
        return 1.0
    if not g.any() or not p.any():
        return 0.0

    spacing = np.asarray(gt.spacing[::-1], dtype=np.float64)
    surface_g, surface_p = boundary(g), boundary(p)
    close = _within(surface_g, surface_p, spacing, tau_mm) + _within(surface_p, surface_g, spacing, tau_mm)
    return close / (int(surface_g.sum()) + int(surface_p.sum()))


def count_spurious_components(gt: LabelVolume, pred: LabelVolume, label: Label) -> int:
    """Predicted 26-connected components of the label that share no voxel with the ground truth."""
    _check_congruent(gt, pred)
    g, p = label_mask(gt, label), label_mask(pred, label)
    components, count = ndimage.label(p, structure=FULL_CONNECTIVITY)
    if count == 0:
        return 0
    hit = np.unique(components[g & p])
    return count - int(np.count_nonzero(hit))


# =============================================================================
# BRUTE-FORCE ORACLES
# =============================================================================

def dsc_brute_force(gt: LabelVolume, pred: LabelVolume, label: Label) -> float:
    g = label_mask(gt, label).ravel().tolist()
    p = label_mask(pred, label).ravel().tolist()
    both = sum(1 for a, b in zip(g, p) if a and b)
    total = sum(g) + sum(p)
    return 1.0 if total == 0 else 2.0 * both / total


def _boundary_brute_force(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1, constant_values=False)
    out = np.zeros_like(mask)
    for z, y, x in zip(*np.nonzero(mask)):
        for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            if not padded[z + 1 + dz, y + 1 + dy, x + 1 + dx]:
                out[z, y, x] = True
                break
    return out


def nsd_brute_force(gt: LabelVolume, pred: LabelVolume, label: Label, tau_mm: float = NSD_TOLERANCE_MM) -> float:
    """All-pairs reference for nsd."""
    g, p = label_mask(gt, label), label_mask(pred, label)
    if not g.any() and not p.any():
        return 1.0
    if not g.any() or not p.any():
        return 0.0

    spacing = np.asarray(gt.spacing[::-1], dtype=np.float64)
    a = np.argwhere(_boundary_brute_force(g))
    b = np.argwhere(_boundary_brute_force(p))
    squared = np.sum(((a[:, None, :] - b[None, :, :]) * spacing) ** 2, axis=2)
    tau2 = tau_mm * tau_mm
    close = int(np.count_nonzero(squared.min(axis=1) <= tau2)) + int(np.count_nonzero(squared.min(axis=0) <= tau2))
    return close / (len(a) + len(b))


# =============================================================================
# REPORT
# =============================================================================

@dataclass
class EvalReport:
    cases: pd.DataFrame  # case, organ, dsc, nsd (percent), spurious
    summary: pd.DataFrame  # organ, dsc_mean, dsc_std, nsd_mean, nsd_std, spurious_mean
    runtime_seconds: Optional[float] = None
    peak_arena_bytes: Optional[int] = None

    def to_text(self) -> str:
        """Aligned plain-text table, one column per organ."""
        organs = list(self.summary["organ"])
        rows = {
            "DSC (%)": [f"{m:.2f} ± {s:.2f}" for m, s in zip(self.summary["dsc_mean"], self.summary["dsc_std"])],
            "NSD (%)": [f"{m:.2f} ± {s:.2f}" for m, s in zip(self.summary["nsd_mean"], self.summary["nsd_std"])],
        }
        width = max(len(cell) for cells in rows.values() for cell in cells + organs)
        lines = [" " * 8 + "  ".join(name.rjust(width) for name in organs)]
        for metric, cells in rows.items():
            lines.append(metric.ljust(8) + "  ".join(cell.rjust(width) for cell in cells))
        if self.runtime_seconds is not None:
            lines.append(f"runtime_seconds\t{self.runtime_seconds:.3f}")
        if self.peak_arena_bytes is not None:
            lines.append(f"peak_arena_bytes\t{self.peak_arena_bytes}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str) -> Dict[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            "cases": os.path.join(out_dir, "per_case.tsv"),
            "summary": os.path.join(out_dir, "summary.tsv"),
            "text": os.path.join(out_dir, "report.txt"),
        }
        self.cases.to_csv(paths["cases"], sep="\t", index=False, float_format="%.4f")
        self.summary.to_csv(paths["summary"], sep="\t", index=False, float_format="%.4f")
        with open(paths["text"], "w") as handle:
            handle.write(self.to_text())
        return paths


def _score_case(name: str, gt: LabelVolume, pred: LabelVolume, labels: Dict[str, Tuple[int, ...]], tau: float):
    return [
        {
            "case": name,
            "organ": organ,
            "dsc": 100.0 * dsc(gt, pred, values),
            "nsd": 100.0 * nsd(gt, pred, values, tau),
            "spurious": count_spurious_components(gt, pred, values),
        }
        for organ, values in labels.items()
    ]


def evaluate(
    cases: Sequence[Tuple[LabelVolume, LabelVolume]],
    labels: Dict[str, Tuple[int, ...]] = ORGANS,
    names: Optional[Sequence[str]] = None,
    tau_mm: float = NSD_TOLERANCE_MM,
    n_jobs: int = 1,
    runtime_seconds: Optional[float] = None,
    peak_arena_bytes: Optional[int] = None,
) -> EvalReport:
    """
    Per-organ DSC and NSD in percent, mean and population std over cases.

    Args:
        cases: (ground truth, prediction) pairs
        labels: ordered organ name -> label values; an organ is the union of its values
        names: case names, defaults to their positions
        tau_mm: NSD tolerance
        n_jobs: joblib workers; results keep case order

    Returns:
        EvalReport
    """
    if not cases:
        raise ValueError("evaluate needs at least one case")
    names = list(names) if names is not None else [str(i) for i in range(len(cases))]
    if len(names) != len(cases):
        raise ValueError(f"{len(names)} names for {len(cases)} cases")

    scored = Parallel(n_jobs=n_jobs)(
        delayed(_score_case)(name, gt, pred, labels, tau_mm) for name, (gt, pred) in zip(names, cases)
    )
    table = pd.DataFrame([row for rows in scored for row in rows], columns=["case", "organ", "dsc", "nsd", "spurious"])

    grouped = table.groupby("organ", sort=False)
    summary = pd.DataFrame({
        "organ": list(labels),
        "dsc_mean": grouped["dsc"].mean().reindex(list(labels)).to_numpy(),
        "dsc_std": grouped["dsc"].std(ddof=0).reindex(list(labels)).to_numpy(),
        "nsd_mean": grouped["nsd"].mean().reindex(list(labels)).to_numpy(),
        "nsd_std": grouped["nsd"].std(ddof=0).reindex(list(labels)).to_numpy(),
        "spurious_mean": grouped["spurious"].mean().reindex(list(labels)).to_numpy(),
    })
    return EvalReport(table, summary, runtime_seconds, peak_arena_bytes)
