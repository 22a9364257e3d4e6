"""
Activation memory planning.

Every node's activation is live from the step that produces it to the last
step that reads it; graph outputs stay live to the end. Buffers are placed
in one arena, largest first, each at the lowest offset that does not collide
with an already placed buffer whose lifetime intersects its own.
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.models.network import Network, infer_shapes

ALIGNMENT = 64


@dataclass
class MemoryPlan:
    assignments: Dict[str, Tuple[int, int]]  # node -> (offset bytes, size bytes)
    intervals: Dict[str, Tuple[int, int]]  # node -> (first step, last step), inclusive
    peak_bytes: int
    naive_bytes: int
    input_dims: Tuple[int, int, int]
    itemsize: int

    @property
    def savings(self) -> float:
        return 1.0 - self.peak_bytes / self.naive_bytes if self.naive_bytes else 0.0


def _aligned(nbytes: int) -> int:
    return -(-nbytes // ALIGNMENT) * ALIGNMENT


def liveness(net: Network) -> Dict[str, Tuple[int, int]]:
    """Inclusive (produced, last read) step of every node."""
    position = {node.name: step for step, node in enumerate(net.nodes)}
    last = len(net.nodes) - 1
    intervals = {}
    for name, users in net.consumers().items():
        end = max((position[user] for user in users), default=position[name])
        if name in net.outputs.values():
            end = last
        intervals[name] = (position[name], end)
    return intervals


def _overlaps(a: Tuple[int, int], b: Tuple[int, int]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def plan_memory(net: Network, input_dims: Sequence[int], dtype=np.float32) -> MemoryPlan:
    """
    Greedy arena plan for one inference pass.

    Args:
        net: network
        input_dims: spatial dims (Z, Y, X)
        dtype: activation dtype

    Returns:
        MemoryPlan with offsets, peak and naive (no reuse) byte totals
    """
    itemsize = np.dtype(dtype).itemsize
    shapes = infer_shapes(net, input_dims)
    intervals = liveness(net)
    sizes = {name: _aligned(int(np.prod(shape)) * itemsize) for name, shape in shapes.items()}
    order = {node.name: step for step, node in enumerate(net.nodes)}

    placed: List[Tuple[str, int, int]] = []
    assignments: Dict[str, Tuple[int, int]] = {}
    for name in sorted(sizes, key=lambda n: (-sizes[n], order[n])):
        size = sizes[name]
        taken = sorted(
            (offset, offset + other_size)
            for other, offset, other_size in placed
            if _overlaps(intervals[name], intervals[other])
        )
        offset = 0
        for start, end in taken:
            if offset + size <= start:
                break
            offset = max(offset, end)
        placed.append((name, offset, size))
        assignments[name] = (offset, size)

    peak = max(offset + size for offset, size in assignments.values())
    return MemoryPlan(
        assignments={node.name: assignments[node.name] for node in net.nodes},
        intervals=intervals,
        peak_bytes=peak,
        naive_bytes=sum(sizes.values()),
        input_dims=tuple(int(d) for d in input_dims),
        itemsize=itemsize,
    )


def replay_plan(net: Network, plan: MemoryPlan) -> List[Tuple[str, str, str]]:
    """
    Walk the topological order writing each buffer into its planned range and
    report every read of a buffer that a later write has overwritten.

    Returns:
        list of (reader, clobbered source, overwriting node); empty when valid
    """
    violations = []
    clobbered_by: Dict[str, str] = {}
    written: Dict[str, Tuple[int, int]] = {}
    for node in net.nodes:
        for source in node.inputs:
            if source in clobbered_by:
                violations.append((node.name, source, clobbered_by[source]))

        offset, size = plan.assignments[node.name]
        span = (offset, offset + size - 1)
        for other, other_span in written.items():
            if other not in clobbered_by and _overlaps(span, other_span):
                clobbered_by[other] = node.name
        written[node.name] = span

    for name in net.outputs.values():
        if name in clobbered_by:
            violations.append(("<output>", name, clobbered_by[name]))
    return violations
