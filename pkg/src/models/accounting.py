"""
Parameter and FLOP accounting, and comparison against the published figures
for the localization and segmentation networks.
"""

from typing import Dict, List, Sequence

from src.models.network import Network, infer_shapes, node_flops

PUBLISHED_PARAMETERS = {"loc": 637_474, "seg": 1_270_090}

# (arch, dims as listed in the publication (x, y, z), FLOPs for one forward pass)
PUBLISHED_FLOPS = [
    ("loc", (32, 32, 32), 8_613_207_612),
    ("loc", (80, 80, 256), 430_660_377_660),
    ("seg", (32, 32, 32), 8_797_627_020),
    ("seg", (160, 128, 160), 879_762_672_300),
]


def count_parameters(net: Network) -> int:
    """Total number of weight and bias elements."""
    return int(sum(w.size for w in net.weights.values()))


def count_flops(net: Network, input_dims: Sequence[int]) -> int:
    """Inference FLOPs for one forward pass at spatial dims (Z, Y, X)."""
    shapes = infer_shapes(net, input_dims)
    return int(sum(node_flops(node, shapes[node.name]) for node in net.nodes))


def flops_by_op(net: Network, input_dims: Sequence[int]) -> Dict[str, int]:
    shapes = infer_shapes(net, input_dims)
    totals: Dict[str, int] = {}
    for node in net.nodes:
        totals[node.op] = totals.get(node.op, 0) + node_flops(node, shapes[node.name])
    return totals


def published_flops(arch: str, input_dims: Sequence[int]):
    """Published FLOP figure for a voxel layout, matched irrespective of axis order, else None."""
    key = sorted(int(d) for d in input_dims)
    for name, dims, flops in PUBLISHED_FLOPS:
        if name == arch and sorted(dims) == key:
            return flops
    return None


def compare_with_published(arch: str, net: Network, input_dims: Sequence[int]) -> List[Dict]:
    """
    Rows of (quantity, computed, published, delta %, ratio) for the CLI.

    The FLOP linearity ratios between the published input sizes are reported
    for every arch, because they do not depend on the counting convention.
    """
    rows = []
    params = count_parameters(net)
    published = PUBLISHED_PARAMETERS.get(arch)
    rows.append(_row("parameters", params, published))

    flops = count_flops(net, input_dims)
    rows.append(_row(f"flops@{'x'.join(str(d) for d in input_dims)}", flops, published_flops(arch, input_dims)))

    reference = [entry for entry in PUBLISHED_FLOPS if entry[0] == arch]
    if len(reference) == 2:
        (_, small_dims, small_flops), (_, large_dims, large_flops) = reference
        computed_ratio = count_flops(net, tuple(reversed(large_dims))) / count_flops(net, tuple(reversed(small_dims)))
        rows.append({
            "quantity": "flops ratio",
            "computed": computed_ratio,
            "published": large_flops / small_flops,
            "delta_percent": 100.0 * (computed_ratio * small_flops / large_flops - 1.0),
        })
    return rows


def _row(quantity: str, computed, published) -> Dict:
    return {
        "quantity": quantity,
        "computed": computed,
        "published": published,
        "delta_percent": None if not published else 100.0 * (computed - published) / published,
    }
