import os
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import KFold

from src.data.metaimage import read_metaimage, write_metaimage
from src.data.volume import LabelVolume, Volume

MANIFEST_NAME = "manifest.csv"


@dataclass
class Case:
    name: str
    image_path: str
    label_path: str

    def load(self) -> Tuple[Volume, LabelVolume]:
        return read_metaimage(self.image_path), read_metaimage(self.label_path, as_label=True)


def load_data(file_path: str) -> pd.DataFrame:
    """Load a CSV file and return DataFrame."""

    if not os.path.exists(file_path):
        raise FileNotFoundError(f"File not found: {file_path}")

    return pd.read_csv(file_path, dtype=str, keep_default_na=False)


def load_manifest(path: str) -> List[Case]:
    """
    Cases listed in a manifest CSV (columns case, image, label).

    A directory argument means its manifest.csv. Paths are relative to the
    manifest's directory.
    """
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    df = load_data(path)
    root = os.path.dirname(os.path.abspath(path))
    return [
        Case(row["case"], os.path.join(root, row["image"]), os.path.join(root, row["label"]))
        for _, row in df.iterrows()
    ]


def write_manifest(out_dir: str, names: Sequence[str]) -> str:
    """Manifest for image_<name>.mha / label_<name>.mha pairs in out_dir."""
    df = pd.DataFrame({
        "case": list(names),
        "image": [f"image_{name}.mha" for name in names],
        "label": [f"label_{name}.mha" for name in names],
    }, columns=["case", "image", "label"])
    path = os.path.join(out_dir, MANIFEST_NAME)
    df.to_csv(path, index=False)
    return path


def save_case(out_dir: str, name: str, image: Volume, labels: LabelVolume) -> Case:
    case = Case(name, os.path.join(out_dir, f"image_{name}.mha"), os.path.join(out_dir, f"label_{name}.mha"))
    write_metaimage(image, case.image_path)
    write_metaimage(labels, case.label_path)
    return case


def load_dataset(cases: Sequence[Case]) -> List[Tuple[Volume, LabelVolume]]:
    return [case.load() for case in cases]


def kfold_splits(n_cases: int, folds: int, seed: int = 0) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Deterministic shuffled (train indices, held-out indices) per fold."""
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    if n_cases < folds:
        raise ValueError(f"{n_cases} cases cannot be split into {folds} folds")
    splitter = KFold(n_splits=folds, shuffle=True, random_state=seed % 2 ** 32)
    return [(train, held_out) for train, held_out in splitter.split(np.arange(n_cases))]
