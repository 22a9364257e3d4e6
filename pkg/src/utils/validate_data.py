"""
Data Validation Module.

Checks volumes, label volumes, grids and case manifests before they enter
training or inference. Every validator returns a report dictionary and can
raise instead when raise_on_fail is set.
"""

import os
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from src.data.grid import GridBounds
from src.data.volume import GridSpec, LabelVolume, Volume, direction_is_orthonormal

MANIFEST_COLUMNS = ("case", "image", "label")


# =============================================================================
# GEOMETRY CHECKS
# =============================================================================

def _geometry_checks(dims, spacing, direction) -> List[Dict]:
    results = []

    success = len(dims) == 3 and all(int(d) >= 1 for d in dims)
    results.append({
        'test': 'positive_dims',
        'column': 'dims',
        'success': success,
        'message': f"dims: {tuple(dims)}"
    })

    success = all(float(s) > 0 for s in spacing)
    results.append({
        'test': 'positive_spacing',
        'column': 'spacing',
        'success': success,
        'message': f"spacing: {tuple(spacing)}"
    })

    success = direction_is_orthonormal(direction)
    results.append({
        'test': 'orthonormal_direction',
        'column': 'direction',
        'success': success,
        'message': "direction columns orthonormal" if success else f"direction not orthonormal: {np.asarray(direction).tolist()}"
    })
    return results


# =============================================================================
# VOLUME VALIDATION
# =============================================================================

def validate_volume(vol: Volume, raise_on_fail: bool = False) -> Dict:
    """
    Validate an image volume.

    Args:
        vol: Volume to check

    Returns:
        dict: Validation report with success status and details
    """
    results = _geometry_checks(vol.dims, vol.spacing, vol.direction)

    success = vol.data.dtype in (np.float32, np.int16)
    results.append({
        'test': 'element_type',
        'column': 'data',
        'success': success,
        'message': f"dtype: {vol.data.dtype}"
    })

    non_finite = int(np.count_nonzero(~np.isfinite(vol.data))) if vol.data.dtype.kind == 'f' else 0
    results.append({
        'test': 'finite_values',
        'column': 'data',
        'success': non_finite == 0,
        'message': f"non-finite voxels: {non_finite}"
    })

    return _build_report('volume', vol.data.size, results, raise_on_fail)


def validate_label_volume(
    labels: LabelVolume, max_label: int = 4, reference: Optional[Volume] = None, raise_on_fail: bool = False
) -> Dict:
    """
    Validate a label volume, optionally against the image it annotates.

    Args:
        labels: LabelVolume to check
        max_label: largest admissible label
        reference: image that must share the label grid

    Returns:
        dict: Validation report with success status and details
    """
    results = _geometry_checks(labels.dims, labels.spacing, labels.direction)

    success = labels.data.dtype == np.uint8
    results.append({
        'test': 'element_type',
        'column': 'data',
        'success': success,
        'message': f"dtype: {labels.data.dtype}"
    })

    largest = int(labels.data.max()) if labels.data.size else 0
    results.append({
        'test': 'label_range',
        'column': 'data',
        'success': largest <= max_label,
        'message': f"max label {largest} (allowed {max_label})"
    })

    if reference is not None:
        success = labels.grid.same_as(reference.grid)
        results.append({
            'test': 'congruent_grid',
            'column': 'grid',
            'success': success,
            'message': "labels share the image grid" if success else f"label grid {labels.dims} vs image grid {reference.dims}"
        })

    return _build_report('label_volume', labels.data.size, results, raise_on_fail)


# =============================================================================
# GRID VALIDATION
# =============================================================================

def validate_grid(grid: GridSpec, bounds: GridBounds, raise_on_fail: bool = False) -> Dict:
    """
    Validate a solved network input grid against its bounds.

    Returns:
        dict: Validation report with success status and details
    """
    results = _geometry_checks(grid.dims, grid.spacing, grid.direction)

    for axis, (n, lo, hi) in enumerate(zip(grid.dims, bounds.min_dims, bounds.max_dims)):
        results.append({
            'test': 'dims_within_bounds',
            'column': f"dims[{axis}]",
            'success': lo <= n <= hi,
            'message': f"{n} in [{lo}, {hi}]"
        })
        results.append({
            'test': 'dims_multiple',
            'column': f"dims[{axis}]",
            'success': n % bounds.multiple == 0,
            'message': f"{n} divisible by {bounds.multiple}"
        })

    success = min(grid.spacing) >= bounds.base_spacing - 1e-9
    results.append({
        'test': 'minimum_spacing',
        'column': 'spacing',
        'success': success,
        'message': f"spacing {grid.spacing} >= {bounds.base_spacing}"
    })

    return _build_report('grid', int(np.prod(grid.dims)), results, raise_on_fail)


# =============================================================================
# MANIFEST VALIDATION
# =============================================================================

def validate_manifest(df: pd.DataFrame, root: str = ".", raise_on_fail: bool = False) -> Dict:
    """
    Validate a case manifest.

    Args:
        df: manifest with columns case, image, label
        root: directory the paths are relative to

    Returns:
        dict: Validation report with success status and details
    """
    results = []

    for col in MANIFEST_COLUMNS:
        success = col in df.columns
        results.append({
            'test': 'column_exists',
            'column': col,
            'success': success,
            'message': f"Column '{col}' exists" if success else f"Missing column: {col}"
        })

    if 'case' in df.columns:
        is_unique = df['case'].nunique() == len(df)
        results.append({
            'test': 'unique_values',
            'column': 'case',
            'success': is_unique,
            'message': f"case unique: {df['case'].nunique()}/{len(df)}"
        })

    for col in MANIFEST_COLUMNS:
        if col in df.columns:
            null_count = int(df[col].isnull().sum())
            results.append({
                'test': 'not_null',
                'column': col,
                'success': null_count == 0,
                'message': f"'{col}' nulls: {null_count}"
            })

    for col in ('image', 'label'):
        if col in df.columns:
            missing = [p for p in df[col].dropna() if not os.path.exists(os.path.join(root, str(p)))]
            results.append({
                'test': 'files_exist',
                'column': col,
                'success': not missing,
                'message': f"missing {col} files: {missing[:5]}" if missing else f"all {col} files present"
            })

    return _build_report('manifest', len(df), results, raise_on_fail)


# =============================================================================
# HELPER FUNCTIONS
# =============================================================================

def _build_report(subject: str, size: int, results: List[Dict], raise_on_fail: bool = False) -> Dict:
    """Build validation report from results."""
    all_success = all(r['success'] for r in results)
    failed = [r for r in results if not r['success']]

    report = {
        'subject': subject,
        'success': all_success,
        'total_checks': len(results),
        'passed': len([r for r in results if r['success']]),
        'failed': len(failed),
        'failed_tests': failed,
        'size': size
    }

    if not all_success and raise_on_fail:
        failed_msgs = [f"{t['test']} on {t.get('column', subject)}" for t in failed]
        raise ValueError(f"Validation failed for {subject}: {failed_msgs}")

    return report
