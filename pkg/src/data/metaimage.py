"""
MetaImage (.mha / .mhd) reader and writer.

Headers are "Key = Value" text lines ending with ElementDataFile. The payload is
little-endian raw data with x varying fastest, either attached after the
header (ElementDataFile = LOCAL) or in a separate file named by ElementDataFile.
"""

import os
from typing import Dict, Optional, Union

import numpy as np

from src.data.volume import LabelVolume, Volume, direction_is_orthonormal

ELEMENT_TYPES = {
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_UCHAR": np.dtype("u1"),
}

REQUIRED_KEYS = ("NDims", "DimSize", "ElementType", "ElementDataFile")


class MetaImageError(ValueError):
    """Malformed or unsupported MetaImage file."""


def _format_number(value: float) -> str:
    text = repr(float(value))
    return text[:-2] if text.endswith(".0") else text


def _format_values(values) -> str:
    return " ".join(_format_number(v) for v in values)


def _element_type_for(data: np.ndarray) -> str:
    if data.dtype == np.uint8:
        return "MET_UCHAR"
    if data.dtype == np.int16:
        return "MET_SHORT"
    return "MET_FLOAT"


def _parse_header(handle, path: str) -> Dict[str, str]:
    header = {}
    while True:
        raw = handle.readline()
        if not raw:
            raise MetaImageError(f"{path}: header ended before ElementDataFile")
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise MetaImageError(f"{path}: non-ASCII bytes in header")
        if not line:
            continue
        if "=" not in line:
            raise MetaImageError(f"{path}: malformed header line {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        header[key] = value
        if key == "ElementDataFile":
            return header


def _floats(header: Dict[str, str], key: str, count: int, default, path: str):
    if key not in header:
        return default
    try:
        values = [float(v) for v in header[key].split()]
    except ValueError:
        raise MetaImageError(f"{path}: {key} is not numeric: {header[key]!r}")
    if len(values) != count:
        raise MetaImageError(f"{path}: {key} expects {count} values, got {len(values)}")
    return values


def _label_values(data: np.ndarray, max_label: int, path: str) -> np.ndarray:
    """Checks range and integrality on the raw payload, then casts."""
    if data.size == 0:
        return data.astype(np.uint8)
    if data.dtype.kind == "f" and not (np.all(np.isfinite(data)) and np.all(data == np.round(data))):
        raise MetaImageError(f"{path}: label payload holds non-integral values")
    low, high = data.min(), data.max()
    if low < 0 or high > min(max_label, 255):
        raise MetaImageError(f"{path}: label values must lie in [0, {min(max_label, 255)}], found [{low}, {high}]")
    return data.astype(np.uint8)


def read_metaimage(path: str, as_label: bool = False, max_label: Optional[int] = None) -> Union[Volume, LabelVolume]:
    """
    Read a MetaImage file.

    Args:
        path: .mha (attached payload) or .mhd (detached payload) file
        as_label: return a LabelVolume; integer payloads keep their values
        max_label: largest label value accepted when as_label is set (default 255)

    Returns:
        Volume with float32 data, or LabelVolume when as_label is set

    Raises:
        MetaImageError: malformed header, payload size mismatch, non-positive
            spacing, non-orthonormal direction, or label values that are not
            integers in [0, max_label]
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"File not found: {path}")

    with open(path, "rb") as handle:
        header = _parse_header(handle, path)
        attached = handle.read()

    missing = [key for key in REQUIRED_KEYS if key not in header]
    if missing:
        raise MetaImageError(f"{path}: missing header keys {missing}")
    if header["NDims"] != "3":
        raise MetaImageError(f"{path}: only NDims = 3 is supported, got {header['NDims']}")
    if header.get("BinaryDataByteOrderMSB", "False") not in ("False", "false", "0"):
        raise MetaImageError(f"{path}: big-endian payloads are not supported")
    if header.get("CompressedData", "False") not in ("False", "false", "0"):
        raise MetaImageError(f"{path}: compressed payloads are not supported")

    element_type = header["ElementType"]
    if element_type not in ELEMENT_TYPES:
        raise MetaImageError(f"{path}: unsupported element type {element_type}")
    dtype = ELEMENT_TYPES[element_type]

    try:
        dims = [int(v) for v in header["DimSize"].split()]
    except ValueError:
        raise MetaImageError(f"{path}: DimSize is not integral: {header['DimSize']!r}")
    if len(dims) != 3 or min(dims) <= 0:
        raise MetaImageError(f"{path}: DimSize must be 3 positive integers, got {dims}")

    spacing = _floats(header, "ElementSpacing", 3, [1.0, 1.0, 1.0], path)
    origin = _floats(header, "Offset", 3, [0.0, 0.0, 0.0], path)
    matrix = _floats(header, "TransformMatrix", 9, list(np.eye(3).ravel()), path)
    if not all(np.isfinite(v) and v > 0 for v in spacing):
        raise MetaImageError(f"{path}: ElementSpacing must be positive, got {spacing}")
    direction = np.asarray(matrix, dtype=np.float64).reshape(3, 3)
    if not direction_is_orthonormal(direction):
        raise MetaImageError(f"{path}: TransformMatrix is not orthonormal: {matrix}")

    data_file = header["ElementDataFile"]
    if data_file == "LOCAL":
        payload = attached
    else:
        detached = os.path.join(os.path.dirname(os.path.abspath(path)), data_file)
        if not os.path.exists(detached):
            raise FileNotFoundError(f"File not found: {detached}")
        with open(detached, "rb") as handle:
            payload = handle.read()

    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(payload) != expected:
        raise MetaImageError(
            f"{path}: DimSize {dims} with {element_type} needs {expected} payload bytes, found {len(payload)}"
        )

    data = np.frombuffer(payload, dtype=dtype).reshape(dims[2], dims[1], dims[0])
    geometry = dict(spacing=tuple(spacing), origin=tuple(origin), direction=direction)
    if as_label:
        return LabelVolume(_label_values(data, 255 if max_label is None else max_label, path), **geometry)
    return Volume(data.astype(np.float32), **geometry)


def write_metaimage(vol: Union[Volume, LabelVolume], path: str) -> None:
    """
    Write a volume as MetaImage. A .mhd path gets a detached .raw payload
    next to it; any other extension gets the payload attached.
    """
    if isinstance(vol, LabelVolume):
        data = vol.data.astype(np.uint8, copy=False)
    elif vol.data.dtype in (np.int16, np.uint8):
        data = vol.data
    else:
        data = vol.data.astype(np.float32, copy=False)
    element_type = _element_type_for(data)
    payload = np.ascontiguousarray(data, dtype=ELEMENT_TYPES[element_type]).tobytes()

    detached = path.endswith(".mhd")
    data_file = os.path.splitext(os.path.basename(path))[0] + ".raw" if detached else "LOCAL"

    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        f"TransformMatrix = {_format_values(np.asarray(vol.direction).ravel())}",
        f"Offset = {_format_values(vol.origin)}",
        f"ElementSpacing = {_format_values(vol.spacing)}",
        f"DimSize = {' '.join(str(d) for d in vol.dims)}",
        f"ElementType = {element_type}",
        f"ElementDataFile = {data_file}",
    ]
    header = ("\n".join(lines) + "\n").encode("ascii")

    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"Directory not found: {directory}")

    with open(path, "wb") as handle:
        handle.write(header)
        if not detached:
            handle.write(payload)
    if detached:
        with open(os.path.join(directory, data_file), "wb") as handle:
            handle.write(payload)
