"""
Layer-graph representation shared by builders, executor, accounting,
memory planning and checkpoints.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

OPS = ("input", "conv", "leaky_relu", "dropout", "avg_pool", "upsample", "concat", "mul", "sigmoid", "softmax")

Shape = Tuple[int, ...]


class GraphError(ValueError):
    """Malformed graph or input dims the graph cannot process."""


@dataclass
class Node:
    name: str
    op: str
    inputs: Tuple[str, ...] = ()
    attrs: Dict = field(default_factory=dict)


@dataclass(eq=False)
class Network:
    """
    Directed acyclic layer graph.

    Nodes are stored in topological order; weights are keyed by name in the
    order the graph references them; outputs map head names to node names.
    """

    nodes: List[Node]
    weights: Dict[str, np.ndarray]
    outputs: Dict[str, str]
    kind: str = "unet"
    divisor: int = 1

    def __post_init__(self):
        self._index = {node.name: node for node in self.nodes}
        self.validate()

    def node(self, name: str) -> Node:
        return self._index[name]

    @property
    def input_node(self) -> Node:
        return self.nodes[0]

    def validate(self):
        seen = set()
        referenced = []
        for position, node in enumerate(self.nodes):
            if node.op not in OPS:
                raise GraphError(f"Unknown op {node.op!r} at node {node.name}")
            if node.name in seen:
                raise GraphError(f"Duplicate node name {node.name}")
            if (node.op == "input") != (position == 0):
                raise GraphError("The first node, and only the first node, must be the input")
            for source in node.inputs:
                if source not in seen:
                    raise GraphError(f"Node {node.name} reads {source} before it is produced")
            if node.op == "conv":
                referenced += [node.attrs["weight"], node.attrs["bias"]]
            seen.add(node.name)

        if len(referenced) != len(set(referenced)):
            raise GraphError("A weight tensor is referenced more than once")
        if set(referenced) != set(self.weights):
            raise GraphError(f"Unreferenced or missing weights: {sorted(set(referenced) ^ set(self.weights))}")
        missing = [name for name in self.outputs.values() if name not in seen]
        if missing:
            raise GraphError(f"Outputs refer to unknown nodes: {missing}")

    def copy(self, dtype=None) -> "Network":
        weights = {name: np.array(w, dtype=dtype or w.dtype) for name, w in self.weights.items()}
        nodes = [Node(n.name, n.op, n.inputs, dict(n.attrs)) for n in self.nodes]
        return Network(nodes, weights, dict(self.outputs), self.kind, self.divisor)

    def consumers(self) -> Dict[str, List[str]]:
        users = {node.name: [] for node in self.nodes}
        for node in self.nodes:
            for source in node.inputs:
                users[source].append(node.name)
        return users


def infer_shapes(net: Network, input_dims: Sequence[int]) -> Dict[str, Shape]:
    """Activation shape [C, Z, Y, X] of every node for spatial input dims (Z, Y, X)."""
    dims = tuple(int(d) for d in input_dims)
    if len(dims) != 3 or min(dims) < 1:
        raise GraphError(f"input dims must be 3 positive integers, got {input_dims}")
    if any(d % net.divisor for d in dims):
        raise GraphError(f"input dims {dims} not divisible by {net.divisor}")

    shapes: Dict[str, Shape] = {}
    for node in net.nodes:
        ins = [shapes[name] for name in node.inputs]
        if node.op == "input":
            shapes[node.name] = (node.attrs["channels"],) + dims
        elif node.op == "conv":
            if ins[0][0] != node.attrs["in_channels"]:
                raise GraphError(f"{node.name}: expects {node.attrs['in_channels']} channels, got {ins[0][0]}")
            shapes[node.name] = (node.attrs["out_channels"],) + ins[0][1:]
        elif node.op == "avg_pool":
            factor = node.attrs["factor"]
            if any(d % factor for d in ins[0][1:]):
                raise GraphError(f"{node.name}: dims {ins[0][1:]} not divisible by {factor}")
            shapes[node.name] = (ins[0][0],) + tuple(d // factor for d in ins[0][1:])
        elif node.op == "upsample":
            factor = node.attrs["factor"]
            shapes[node.name] = (ins[0][0],) + tuple(d * factor for d in ins[0][1:])
        elif node.op == "concat":
            if ins[0][1:] != ins[1][1:]:
                raise GraphError(f"{node.name}: spatial dims differ {ins[0][1:]} vs {ins[1][1:]}")
            shapes[node.name] = (ins[0][0] + ins[1][0],) + ins[0][1:]
        elif node.op == "mul":
            if ins[0] != ins[1]:
                raise GraphError(f"{node.name}: shapes differ {ins[0]} vs {ins[1]}")
            shapes[node.name] = ins[0]
        else:
            shapes[node.name] = ins[0]
    return shapes


def node_flops(node: Node, shape: Shape) -> int:
    """
    Inference FLOPs of one node given its output shape.

    conv: 2 per multiply-accumulate plus one bias add per output element;
    activations, products, softmax, pooling and upsampling: one per output
    element; input, dropout (identity at inference) and concat: zero.
    """
    elements = int(np.prod(shape))
    if node.op == "conv":
        taps = node.attrs["kernel"] ** 3
        return 2 * taps * node.attrs["in_channels"] * elements + elements
    if node.op in ("leaky_relu", "sigmoid", "mul", "softmax", "avg_pool", "upsample"):
        return elements
    return 0
