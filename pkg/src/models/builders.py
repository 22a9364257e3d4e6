"""
Network builders: the localization U-Net and the SpatialConfiguration-Net.

U-Net layout per level: a contracting block (two conv -> leaky ReLU ->
dropout units), average pooling between levels, and on the way up trilinear
upsampling, channel concatenation with the skip, and an expanding block. The
deepest level also runs an expanding block. Width is constant across levels.
"""

import math
from typing import Dict, List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.engine.ops import he_init, zero_bias
from src.engine.rng import INIT_STREAM, make_rng
from src.models.network import Network, Node


class ArchSpec(BaseModel):
    """
    U-Net hyperparameters. The defaults add an expanding block at the deepest
    level and a 1x1x1 output (114 parameters at one level and one filter);
    final_kernel_size=3 with deepest_expanding_block=False is the compact
    arrangement (84 parameters).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    levels: int = Field(5, ge=1)
    filters: int = Field(32, ge=1)
    in_channels: int = Field(1, ge=1)
    out_channels: int = Field(2, ge=1)
    dropout_rate: float = Field(0.1, ge=0.0, lt=1.0)
    leaky_alpha: float = Field(0.1, ge=0.0)
    kernel_size: int = 3
    final_kernel_size: int = 1
    deepest_expanding_block: bool = True

    @field_validator("kernel_size", "final_kernel_size")
    @classmethod
    def _odd(cls, value: int) -> int:
        if value < 1 or value % 2 == 0:
            raise ValueError(f"kernel sizes must be odd and positive, got {value}")
        return value

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)


LOCALIZATION_ARCH = ArchSpec(levels=5, filters=32, in_channels=1, out_channels=2)
SCN_LOCAL_ARCH = ArchSpec(levels=5, filters=32, in_channels=1, out_channels=5)
SCN_SPATIAL_ARCH = ArchSpec(levels=4, filters=16, in_channels=5, out_channels=5, kernel_size=5)
SPATIAL_FACTOR = 4


class GraphBuilder:
    """Appends nodes in topological order and initializes conv weights."""

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.nodes: List[Node] = []
        self.weights: Dict[str, np.ndarray] = {}
        self.channels: Dict[str, int] = {}
        self.rng = make_rng(seed, INIT_STREAM)
        self.dtype = dtype

    def _add(self, name: str, op: str, inputs, width: int, **attrs) -> str:
        self.nodes.append(Node(name, op, tuple(inputs), attrs))
        self.channels[name] = width
        return name

    def input(self, name: str, channels: int) -> str:
        return self._add(name, "input", (), channels, channels=channels)

    def conv(self, name: str, source: str, out_channels: int, kernel: int = 3) -> str:
        in_channels = self.channels[source]
        weight, bias = f"{name}/kernel", f"{name}/bias"
        self.weights[weight] = he_init((out_channels, in_channels, kernel, kernel, kernel), self.rng, self.dtype)
        self.weights[bias] = zero_bias(out_channels, self.dtype)
        return self._add(
            name, "conv", (source,), out_channels,
            kernel=kernel, in_channels=in_channels, out_channels=out_channels, weight=weight, bias=bias,
        )

    def leaky_relu(self, name: str, source: str, alpha: float) -> str:
        return self._add(name, "leaky_relu", (source,), self.channels[source], alpha=alpha)

    def dropout(self, name: str, source: str, rate: float) -> str:
        return self._add(name, "dropout", (source,), self.channels[source], rate=rate)

    def avg_pool(self, name: str, source: str, factor: int = 2) -> str:
        return self._add(name, "avg_pool", (source,), self.channels[source], factor=factor)

    def upsample(self, name: str, source: str, factor: int = 2) -> str:
        return self._add(name, "upsample", (source,), self.channels[source], factor=factor)

    def concat(self, name: str, a: str, b: str) -> str:
        return self._add(name, "concat", (a, b), self.channels[a] + self.channels[b])

    def mul(self, name: str, a: str, b: str) -> str:
        return self._add(name, "mul", (a, b), self.channels[a])

    def sigmoid(self, name: str, source: str) -> str:
        return self._add(name, "sigmoid", (source,), self.channels[source])

    def softmax(self, name: str, source: str) -> str:
        return self._add(name, "softmax", (source,), self.channels[source])

    def build(self, outputs: Dict[str, str], kind: str, divisor: int) -> Network:
        return Network(self.nodes, self.weights, outputs, kind, divisor)


def _block(g: GraphBuilder, prefix: str, node: str, spec: ArchSpec) -> str:
    for unit in range(2):
        name = f"{prefix}/conv{unit}"
        node = g.conv(name, node, spec.filters, spec.kernel_size)
        node = g.leaky_relu(f"{name}/act", node, spec.leaky_alpha)
        node = g.dropout(f"{name}/dropout", node, spec.dropout_rate)
    return node


def add_unet(g: GraphBuilder, spec: ArchSpec, source: str, prefix: str) -> str:
    """Append a U-Net reading `source`; returns the linear output node."""
    skips = []
    node = source
    for level in range(spec.levels):
        node = _block(g, f"{prefix}/contracting{level}", node, spec)
        skips.append(node)
        if level < spec.levels - 1:
            node = g.avg_pool(f"{prefix}/downsample{level}", node)

    for level in reversed(range(spec.levels)):
        if level == spec.levels - 1:
            node = skips[level]
            if not spec.deepest_expanding_block:
                continue
        else:
            node = g.upsample(f"{prefix}/upsample{level}", node)
            node = g.concat(f"{prefix}/skip{level}", skips[level], node)
        node = _block(g, f"{prefix}/expanding{level}", node, spec)

    return g.conv(f"{prefix}/output", node, spec.out_channels, spec.final_kernel_size)


def build_unet(spec: ArchSpec = LOCALIZATION_ARCH, seed: int = 0, prefix: str = "unet") -> Network:
    """
    U-Net with a channel softmax head.

    Outputs:
        logits: final linear convolution
        final: channel softmax of the logits
    """
    g = GraphBuilder(seed)
    image = g.input("image", spec.in_channels)
    logits = add_unet(g, spec, image, prefix)
    final = g.softmax("final", logits)
    return g.build({"final": final, "logits": logits}, kind="unet", divisor=spec.divisor)


def build_scn(
    local: ArchSpec = SCN_LOCAL_ARCH,
    spatial: ArchSpec = SCN_SPATIAL_ARCH,
    labels: int = 5,
    spatial_factor: int = SPATIAL_FACTOR,
    seed: int = 0,
) -> Network:
    """
    SpatialConfiguration-Net.

    The local U-Net predicts per-label logits from appearance. Its sigmoid
    responses, average pooled by `spatial_factor`, feed the spatial U-Net,
    whose logits are upsampled back to full resolution. The final map is the
    channel softmax of the product of both sigmoid responses.

    Outputs:
        final: combined probability map
        local: local logits
        spatial: full-resolution spatial logits
    """
    local = local.model_copy(update={"out_channels": labels})
    spatial = spatial.model_copy(update={"in_channels": labels, "out_channels": labels})

    g = GraphBuilder(seed)
    image = g.input("image", local.in_channels)
    local_logits = add_unet(g, local, image, "local")
    local_response = g.sigmoid("local/response", local_logits)
    pooled = g.avg_pool("spatial/downsample", local_response, spatial_factor)
    spatial_coarse = add_unet(g, spatial, pooled, "spatial")
    spatial_logits = g.upsample("spatial/upsample", spatial_coarse, spatial_factor)
    spatial_response = g.sigmoid("spatial/response", spatial_logits)
    combined = g.mul("combined", local_response, spatial_response)
    final = g.softmax("final", combined)

    divisor = math.lcm(local.divisor, spatial_factor * spatial.divisor)
    return g.build({"final": final, "local": local_logits, "spatial": spatial_logits}, kind="scn", divisor=divisor)


def unet_parameter_formula(spec: ArchSpec) -> int:
    """Closed-form parameter count of add_unet for a spec."""
    taps, final_taps = spec.kernel_size ** 3, spec.final_kernel_size ** 3
    f, levels = spec.filters, spec.levels
    square = taps * f * f + f
    first = taps * spec.in_channels * f + f
    merged = taps * 2 * f * f + f
    deepest = 2 * square if spec.deepest_expanding_block else 0
    final = final_taps * f * spec.out_channels + spec.out_channels
    return first + (2 * levels - 1) * square + (levels - 1) * (merged + square) + deepest + final

