"""
Graph execution: forward (optionally through a planned activation arena) and
reverse-mode backward over the cached activations.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from src.engine import ops
from src.models.network import GraphError, Network, infer_shapes, node_flops


@dataclass
class ForwardResult:
    outputs: Dict[str, np.ndarray]
    values: Dict[str, np.ndarray] = field(default_factory=dict)
    masks: Dict[str, Optional[np.ndarray]] = field(default_factory=dict)
    flops: int = 0
    arena_bytes: int = 0


def _evaluate(node, args, net: Network, training: bool, rng, out=None):
    """Returns (value, dropout mask or None). Ops that support it write into `out`."""
    op = node.op
    if op == "conv":
        return ops.conv3d(args[0], net.weights[node.attrs["weight"]], net.weights[node.attrs["bias"]], out=out), None
    if op == "leaky_relu":
        return ops.leaky_relu(args[0], node.attrs["alpha"], out=out), None
    if op == "dropout":
        return ops.dropout(args[0], node.attrs["rate"], rng, training)
    if op == "avg_pool":
        return ops.avg_pool3d(args[0], node.attrs["factor"], out=out), None
    if op == "upsample":
        return ops.upsample_trilinear(args[0], node.attrs["factor"]), None
    if op == "concat":
        return ops.concat_channels(args[0], args[1], out=out), None
    if op == "mul":
        return ops.elementwise_mul(args[0], args[1], out=out), None
    if op == "sigmoid":
        return ops.sigmoid(args[0], out=out), None
    if op == "softmax":
        return ops.softmax_channels(args[0], out=out), None
    raise GraphError(f"Cannot evaluate op {op}")


def forward(
    net: Network,
    x: np.ndarray,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    plan=None,
) -> ForwardResult:
    """
    Run the graph on one input [C, Z, Y, X].

    Args:
        net: network
        x: input activation
        training: enables dropout (needs rng) and keeps every activation for backward
        rng: dropout stream
        plan: MemoryPlan; when given, activations live in one shared arena

    Returns:
        ForwardResult with the named outputs and the executed FLOP count
    """
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[0] != net.input_node.attrs["channels"]:
        raise GraphError(f"input must be [{net.input_node.attrs['channels']}, Z, Y, X], got {x.shape}")
    if plan is not None and training:
        raise GraphError("arena execution is inference only")

    arena, shapes = None, {}
    if plan is not None:
        if plan.itemsize != x.dtype.itemsize or plan.input_dims != tuple(x.shape[1:]):
            raise GraphError("memory plan was made for a different input")
        arena = np.zeros(plan.peak_bytes, dtype=np.uint8)
        shapes = infer_shapes(net, plan.input_dims)

    values: Dict[str, np.ndarray] = {}
    masks: Dict[str, Optional[np.ndarray]] = {}
    flops = 0
    for node in net.nodes:
        slot = None
        if arena is not None:
            shape = shapes[node.name]
            offset = plan.assignments[node.name][0]
            slot = arena[offset:offset + int(np.prod(shape)) * x.dtype.itemsize].view(x.dtype).reshape(shape)

        if node.op == "input":
            value = x
        else:
            value, mask = _evaluate(node, [values[name] for name in node.inputs], net, training, rng, out=slot)
            if mask is not None:
                masks[node.name] = mask
        flops += node_flops(node, value.shape)

        # upsample, inference dropout and the input are not computed in place
        if slot is not None and value is not slot:
            np.copyto(slot, value)
            value = slot
        values[node.name] = value

    outputs = {head: np.array(values[name]) for head, name in net.outputs.items()}
    result = ForwardResult(outputs, flops=flops, arena_bytes=0 if arena is None else arena.nbytes)
    if training:
        result.values = values
        result.masks = masks
    return result


def backward(net: Network, result: ForwardResult, output_grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """
    Reverse pass.

    Args:
        net: network used for the forward pass
        result: training-mode ForwardResult
        output_grads: gradient per output head name

    Returns:
        dict: weight name -> gradient, plus 'input' for the input activation
    """
    if not result.values:
        raise GraphError("backward needs a training-mode forward result")

    grads: Dict[str, np.ndarray] = {}

    def accumulate(name: str, grad: np.ndarray):
        grads[name] = grad if name not in grads else grads[name] + grad

    for head, grad in output_grads.items():
        accumulate(net.outputs[head], np.asarray(grad, dtype=result.values[net.outputs[head]].dtype))

    weight_grads: Dict[str, np.ndarray] = {}
    values = result.values
    for node in reversed(net.nodes):
        if node.name not in grads:
            if node.op == "conv":
                weight_grads[node.attrs["weight"]] = np.zeros_like(net.weights[node.attrs["weight"]])
                weight_grads[node.attrs["bias"]] = np.zeros_like(net.weights[node.attrs["bias"]])
            continue
        g = grads.pop(node.name)
        args = [values[name] for name in node.inputs]
        op = node.op

        if op == "input":
            weight_grads["input"] = g
        elif op == "conv":
            gx, gw, gb = ops.conv3d_backward(args[0], net.weights[node.attrs["weight"]], g)
            weight_grads[node.attrs["weight"]] = gw
            weight_grads[node.attrs["bias"]] = gb
            accumulate(node.inputs[0], gx)
        elif op == "leaky_relu":
            accumulate(node.inputs[0], ops.leaky_relu_backward(args[0], g, node.attrs["alpha"]))
        elif op == "dropout":
            accumulate(node.inputs[0], ops.dropout_backward(g, result.masks.get(node.name)))
        elif op == "avg_pool":
            accumulate(node.inputs[0], ops.avg_pool3d_backward(g, node.attrs["factor"]))
        elif op == "upsample":
            accumulate(node.inputs[0], ops.upsample_trilinear_backward(g, node.attrs["factor"]))
        elif op == "concat":
            ga, gb_ = ops.concat_channels_backward(g, args[0].shape[0])
            accumulate(node.inputs[0], ga)
            accumulate(node.inputs[1], gb_)
        elif op == "mul":
            ga, gb_ = ops.elementwise_mul_backward(args[0], args[1], g)
            accumulate(node.inputs[0], ga)
            accumulate(node.inputs[1], gb_)
        elif op == "sigmoid":
            accumulate(node.inputs[0], ops.sigmoid_backward(values[node.name], g))
        elif op == "softmax":
            accumulate(node.inputs[0], ops.softmax_channels_backward(values[node.name], g))
        else:
            raise GraphError(f"Cannot differentiate op {op}")
    return weight_grads
