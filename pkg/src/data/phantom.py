"""
Synthetic abdominal phantoms.

A body ellipsoid in air holds four organ ellipsoids with a fixed relative
layout (liver, kidney, spleen, pancreas). Optional distractor blobs copy an
organ's intensity but sit far from that organ's canonical position and are
labelled background, so only the spatial configuration tells them apart.
"""

import itertools
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.data.volume import LabelVolume, Volume

MAX_PLACEMENT_ATTEMPTS = 200


class PhantomSpecError(ValueError):
    """Phantom layout that cannot be generated."""


class OrganSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    label: int = Field(ge=1, le=255)
    center: Tuple[float, float, float]  # relative (x, y, z) in [0, 1]
    radii: Tuple[float, float, float]  # relative to the volume extent
    intensity_mean: float  # HU
    intensity_std: float = Field(30.0, ge=0.0)


DEFAULT_ORGANS = (
    OrganSpec(name="liver", label=1, center=(0.32, 0.45, 0.55), radii=(0.14, 0.13, 0.12), intensity_mean=600.0),
    OrganSpec(name="kidney", label=2, center=(0.72, 0.70, 0.45), radii=(0.07, 0.08, 0.10), intensity_mean=1000.0),
    OrganSpec(name="spleen", label=3, center=(0.72, 0.30, 0.60), radii=(0.08, 0.08, 0.09), intensity_mean=800.0),
    OrganSpec(name="pancreas", label=4, center=(0.50, 0.50, 0.25), radii=(0.10, 0.05, 0.05), intensity_mean=400.0),
)


class PhantomSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dims: Tuple[int, int, int] = (32, 32, 32)
    spacing: Tuple[float, float, float] = (6.0, 6.0, 6.0)
    organs: Tuple[OrganSpec, ...] = DEFAULT_ORGANS
    body_radii: Tuple[float, float, float] = (0.46, 0.46, 0.48)
    body_intensity: float = 0.0
    air_intensity: float = -1000.0
    noise_std: float = Field(40.0, ge=0.0)
    center_jitter: float = Field(0.03, ge=0.0)
    radius_jitter: float = Field(0.1, ge=0.0, lt=1.0)
    distractors: int = Field(0, ge=0)
    distractor_scale: float = Field(0.6, gt=0.0)
    distractor_min_distance: float = Field(0.3, ge=0.0)
    overlap_tolerance: float = Field(0.1, ge=0.0, lt=1.0)


def validate_phantom_spec(spec: PhantomSpec) -> None:
    """
    Raises:
        PhantomSpecError: organ outside the body or the volume, duplicate
            labels, or two organs whose jittered bounding spheres overlap by
            more than the tolerance
    """
    if min(spec.dims) < 1 or min(spec.spacing) <= 0:
        raise PhantomSpecError(f"Invalid geometry dims={spec.dims} spacing={spec.spacing}")
    labels = [organ.label for organ in spec.organs]
    if len(set(labels)) != len(labels):
        raise PhantomSpecError(f"Duplicate organ labels {labels}")

    extent = np.asarray(spec.dims, dtype=np.float64) * np.asarray(spec.spacing)
    reach = []
    for organ in spec.organs:
        center = np.asarray(organ.center)
        radii = np.asarray(organ.radii) * (1.0 + spec.radius_jitter)
        if np.any(radii <= 0):
            raise PhantomSpecError(f"{organ.name}: radii must be positive")
        offset = np.abs(center - 0.5) + spec.center_jitter
        if np.any(offset + radii > 0.5):
            raise PhantomSpecError(f"{organ.name} can leave the volume")
        # center must stay inside the body shrunk by the organ radii
        room = np.asarray(spec.body_radii) - radii
        if np.any(room <= 0) or np.sum((offset / room) ** 2) > 1.0:
            raise PhantomSpecError(f"{organ.name} can leave the body")
        reach.append((center * extent, float(np.max(radii * extent)) + spec.center_jitter * float(np.max(extent))))

    for i, j in itertools.combinations(range(len(reach)), 2):
        (a, ra), (b, rb) = reach[i], reach[j]
        if np.linalg.norm(a - b) < (ra + rb) * (1.0 - spec.overlap_tolerance):
            raise PhantomSpecError(f"{spec.organs[i].name} and {spec.organs[j].name} overlap")


def _relative_coordinates(dims) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Voxel-center positions in [0, 1], each broadcastable to the (z, y, x) array."""
    x, y, z = ((np.arange(n) + 0.5) / n for n in dims)
    return x[None, None, :], y[None, :, None], z[:, None, None]


def _ellipsoid(coords, center, radii) -> np.ndarray:
    x, y, z = coords
    return (
        ((x - center[0]) / radii[0]) ** 2 + ((y - center[1]) / radii[1]) ** 2 + ((z - center[2]) / radii[2]) ** 2
    ) <= 1.0


def place_distractors(
    spec: PhantomSpec, labels: np.ndarray, placed, rng: np.random.Generator
) -> List[Tuple[OrganSpec, np.ndarray]]:
    """
    Masks of spec.distractors blobs inside the body, each a scaled copy of a
    placed organ (organ, center, radii) away from that organ's canonical
    center. Blobs overlap neither labelled voxels nor each other.
    """
    coords = _relative_coordinates(spec.dims)
    body = _ellipsoid(coords, (0.5, 0.5, 0.5), spec.body_radii)
    occupied = labels > 0
    blobs = []
    for _ in range(spec.distractors):
        organ, _, radii = placed[int(rng.integers(len(placed)))]
        radii = radii * spec.distractor_scale
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            center = rng.uniform(0.5 - np.asarray(spec.body_radii), 0.5 + np.asarray(spec.body_radii))
            if np.linalg.norm(center - np.asarray(organ.center)) < spec.distractor_min_distance:
                continue
            mask = _ellipsoid(coords, center, radii)
            if mask.any() and not np.any(mask & ~body) and not np.any(mask & occupied):
                break
        else:
            raise PhantomSpecError(f"Could not place a {organ.name} distractor in {MAX_PLACEMENT_ATTEMPTS} attempts")
        occupied |= mask
        blobs.append((organ, mask))
    return blobs


def generate_phantom(spec: PhantomSpec, rng: np.random.Generator) -> Tuple[Volume, LabelVolume]:
    """
    One phantom image (int16 HU) and its exact organ labels.

    Raises:
        PhantomSpecError: invalid spec, or an organ or distractor that cannot be placed
    """
    validate_phantom_spec(spec)
    coords = _relative_coordinates(spec.dims)
    shape = spec.dims[::-1]

    image = np.full(shape, spec.air_intensity, dtype=np.float64)
    body = _ellipsoid(coords, (0.5, 0.5, 0.5), spec.body_radii)
    image[body] = spec.body_intensity
    labels = np.zeros(shape, dtype=np.uint8)

    placed = []
    for organ in spec.organs:
        center = np.asarray(organ.center) + rng.uniform(-spec.center_jitter, spec.center_jitter, size=3)
        radii = np.asarray(organ.radii) * rng.uniform(1.0 - spec.radius_jitter, 1.0 + spec.radius_jitter, size=3)
        mask = _ellipsoid(coords, center, radii) & body & (labels == 0)
        if not mask.any():
            raise PhantomSpecError(f"{organ.name} covers no voxel at dims {spec.dims}")
        labels[mask] = organ.label
        image[mask] = organ.intensity_mean + organ.intensity_std * rng.standard_normal(int(mask.sum()))
        placed.append((organ, center, radii))

    for organ, mask in place_distractors(spec, labels, placed, rng):
        image[mask] = organ.intensity_mean + organ.intensity_std * rng.standard_normal(int(mask.sum()))

    if spec.noise_std > 0:
        image[body] += spec.noise_std * rng.standard_normal(int(body.sum()))
    image = np.clip(np.rint(image), np.iinfo(np.int16).min, np.iinfo(np.int16).max).astype(np.int16)

    return Volume(image, spec.spacing), LabelVolume(labels, spec.spacing)


def organ_centroids(labels: LabelVolume) -> dict:
    """Physical centroid per label present, mm."""
    grid = labels.grid
    centroids = {}
    for label in np.unique(labels.data):
        if label == 0:
            continue
        zs, ys, xs = np.nonzero(labels.data == label)
        index = np.array([xs.mean(), ys.mean(), zs.mean()])
        centroids[int(label)] = grid.index_to_physical(index)
    return centroids
