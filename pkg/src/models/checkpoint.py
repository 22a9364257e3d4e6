"""
Binary weight checkpoints.

Layout (little-endian):
    b"SCNW", uint32 version, uint32 tensor count, then per tensor
    uint16 name length, UTF-8 name, uint8 rank, rank x uint32 dims,
    float32 payload.

Training checkpoints hold the raw weights under their graph names followed
by the averaged weights under "ema/<name>".
"""

import os
import struct
from typing import Dict, Optional

import numpy as np

from src.models.network import Network

MAGIC = b"SCNW"
VERSION = 1
EMA_PREFIX = "ema/"


class CheckpointError(ValueError):
    """Corrupt checkpoint, or one that does not fit the graph."""


def _encode(name: str, tensor: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    dims = tensor.shape
    header = struct.pack(f"<H{len(encoded)}sB{len(dims)}I", len(encoded), encoded, len(dims), *dims)
    return header + np.ascontiguousarray(tensor, dtype="<f4").tobytes()


def save_weights(net: Network, path: str, ema: Optional[Dict[str, np.ndarray]] = None) -> None:
    """Write net.weights (and optionally an EMA set) in graph order."""
    tensors = list(net.weights.items())
    if ema is not None:
        tensors += [(EMA_PREFIX + name, ema[name]) for name in net.weights]

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(MAGIC + struct.pack("<II", VERSION, len(tensors)))
        for name, tensor in tensors:
            handle.write(_encode(name, tensor))


class _Reader:
    def __init__(self, payload: bytes, path: str):
        self.payload = payload
        self.position = 0
        self.path = path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.position + size > len(self.payload):
            raise CheckpointError(f"Corrupt checkpoint {self.path}: truncated at byte {self.position}")
        values = struct.unpack_from(fmt, self.payload, self.position)
        self.position += size
        return values

    def take_array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        size = 4 * count
        if self.position + size > len(self.payload):
            raise CheckpointError(f"Corrupt checkpoint {self.path}: truncated at byte {self.position}")
        data = np.frombuffer(self.payload, dtype="<f4", count=count, offset=self.position)
        self.position += size
        return data.reshape(shape).astype(np.float32)


def read_checkpoint(path: str) -> Dict[str, np.ndarray]:
    """All tensors in file order."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, "rb") as handle:
        reader = _Reader(handle.read(), path)

    (magic,) = reader.take("<4s")
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a weight checkpoint (magic {magic!r})")
    version, count = reader.take("<II")
    if version != VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version} in {path}; expected {VERSION}")

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (length,) = reader.take("<H")
        (raw_name,) = reader.take(f"<{length}s")
        (rank,) = reader.take("<B")
        shape = reader.take(f"<{rank}I")
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"Corrupt checkpoint {path}: undecodable tensor name") from exc
        tensors[name] = reader.take_array(shape)

    if reader.position != len(reader.payload):
        raise CheckpointError(f"Corrupt checkpoint {path}: {len(reader.payload) - reader.position} trailing bytes")
    return tensors


def split_ema(tensors: Dict[str, np.ndarray]):
    """(raw weights, EMA weights or None)."""
    raw = {name: t for name, t in tensors.items() if not name.startswith(EMA_PREFIX)}
    ema = {name[len(EMA_PREFIX):]: t for name, t in tensors.items() if name.startswith(EMA_PREFIX)}
    return raw, (ema or None)


def load_weights(net: Network, path: str, prefer_ema: bool = True) -> Network:
    """
    Replace net.weights with the checkpoint's tensors.

    The EMA set is used when present and prefer_ema is set.

    Raises:
        CheckpointError: corrupt file, name or shape mismatch
    """
    raw, ema = split_ema(read_checkpoint(path))
    chosen = ema if (prefer_ema and ema is not None) else raw

    missing = sorted(set(net.weights) - set(chosen))
    extra = sorted(set(chosen) - set(net.weights))
    if missing or extra:
        raise CheckpointError(
            f"Checkpoint {path} does not match the {net.kind} graph: "
            f"missing {missing[:8]}{' ...' if len(missing) > 8 else ''} "
            f"({len(missing)} total), unexpected {extra[:8]}{' ...' if len(extra) > 8 else ''} ({len(extra)} total)"
        )
    for name, weight in net.weights.items():
        if chosen[name].shape != weight.shape:
            raise CheckpointError(f"Shape mismatch for {name}: checkpoint {chosen[name].shape}, graph {weight.shape}")

    for name, weight in net.weights.items():
        net.weights[name] = chosen[name].astype(weight.dtype)
    return net
