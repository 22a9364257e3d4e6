"""
Layer kernels with explicit backward passes.

Activations are arrays shaped [C, Z, Y, X]; convolution weights are shaped
[C_out, C_in, kz, ky, kx]. Kernels preserve the dtype of their inputs, so the
same code runs in float32 and in float64 for gradient verification.
"""

from typing import Optional, Tuple

import numpy as np
from scipy import special


class ShapeError(ValueError):
    """Operand shapes that a kernel cannot combine."""


def _check_activation(x: np.ndarray, name: str = "input"):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be [C, Z, Y, X], got shape {x.shape}")


def _output(out: Optional[np.ndarray], shape, dtype) -> np.ndarray:
    if out is None:
        return np.empty(shape, dtype=dtype)
    if out.shape != tuple(shape) or out.dtype != dtype or not out.flags.c_contiguous:
        raise ShapeError(f"out must be a contiguous {np.dtype(dtype)} array of shape {tuple(shape)}, got {out.shape}")
    return out


# =============================================================================
# CONVOLUTION
# =============================================================================

def _conv_taps(w: np.ndarray):
    _, _, kz, ky, kx = w.shape
    for dz in range(kz):
        for dy in range(ky):
            for dx in range(kx):
                yield dz, dy, dx


def _check_conv(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None):
    _check_activation(x)
    if w.ndim != 5:
        raise ShapeError(f"weights must be [C_out, C_in, kz, ky, kx], got shape {w.shape}")
    if x.shape[0] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[0]} channels, weights expect {w.shape[1]}")
    if any(k % 2 == 0 for k in w.shape[2:]):
        raise ShapeError(f"kernel sizes must be odd, got {w.shape[2:]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"bias must have shape ({w.shape[0]},), got {b.shape}")


def _pad_width(w: np.ndarray):
    return ((0, 0),) + tuple((k // 2, k // 2) for k in w.shape[2:])


def conv3d(x: np.ndarray, w: np.ndarray, b: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    """Stride-1 cross-correlation with zero "same" padding."""
    _check_conv(x, w, b)
    c_in, depth, height, width = x.shape
    c_out = w.shape[0]
    padded = np.pad(x, _pad_width(w))

    out = _output(out, (c_out, depth, height, width), x.dtype)
    flat = out.reshape(c_out, -1)
    flat[...] = b.astype(x.dtype)[:, None]
    for dz, dy, dx in _conv_taps(w):
        patch = padded[:, dz:dz + depth, dy:dy + height, dx:dx + width].reshape(c_in, -1)
        flat += w[:, :, dz, dy, dx].astype(x.dtype) @ patch
    return out


def conv3d_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (input, weights, bias) of conv3d."""
    _check_conv(x, w)
    c_in, depth, height, width = x.shape
    c_out = w.shape[0]
    if grad_out.shape != (c_out, depth, height, width):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match output {(c_out, depth, height, width)}")

    padded = np.pad(x, _pad_width(w))
    grad_padded = np.zeros_like(padded)
    grad_w = np.zeros_like(w, dtype=x.dtype)
    g = grad_out.reshape(c_out, -1)

    for dz, dy, dx in _conv_taps(w):
        window = (slice(None), slice(dz, dz + depth), slice(dy, dy + height), slice(dx, dx + width))
        patch = padded[window].reshape(c_in, -1)
        grad_w[:, :, dz, dy, dx] = g @ patch.T
        grad_padded[window] += (w[:, :, dz, dy, dx].astype(x.dtype).T @ g).reshape(c_in, depth, height, width)

    pz, py, px = (k // 2 for k in w.shape[2:])
    grad_x = grad_padded[:, pz:pz + depth, py:py + height, px:px + width]
    grad_b = grad_out.sum(axis=(1, 2, 3))
    return np.ascontiguousarray(grad_x), grad_w, grad_b


# =============================================================================
# POOLING AND UPSAMPLING
# =============================================================================

def avg_pool3d(x: np.ndarray, factor: int = 2, out: Optional[np.ndarray] = None) -> np.ndarray:
    """Mean over non-overlapping factor³ blocks."""
    _check_activation(x)
    c, depth, height, width = x.shape
    if depth % factor or height % factor or width % factor:
        raise ShapeError(f"spatial dims {x.shape[1:]} not divisible by pooling factor {factor}")
    blocks = x.reshape(c, depth // factor, factor, height // factor, factor, width // factor, factor)
    out = _output(out, (c, depth // factor, height // factor, width // factor), x.dtype)
    return blocks.mean(axis=(2, 4, 6), dtype=x.dtype, out=out)


def avg_pool3d_backward(grad_out: np.ndarray, factor: int = 2) -> np.ndarray:
    _check_activation(grad_out, "grad_out")
    grad = grad_out / grad_out.dtype.type(factor ** 3)
    for axis in (1, 2, 3):
        grad = np.repeat(grad, factor, axis=axis)
    return grad


def linear_upsample_matrix(n: int, factor: int, dtype=np.float32) -> np.ndarray:
    """
    Interpolation matrix (n * factor, n): output i samples the input at
    (i + 0.5) / factor - 0.5, clamped to the edge voxels.
    """
    out = np.zeros((n * factor, n), dtype=np.float64)
    position = (np.arange(n * factor) + 0.5) / factor - 0.5
    position = np.clip(position, 0.0, n - 1)
    lower = np.floor(position).astype(int)
    upper = np.minimum(lower + 1, n - 1)
    frac = position - lower
    rows = np.arange(n * factor)
    np.add.at(out, (rows, lower), 1.0 - frac)
    np.add.at(out, (rows, upper), frac)
    return out.astype(dtype)


def _apply_axis(x: np.ndarray, matrix: np.ndarray, axis: int) -> np.ndarray:
    moved = np.tensordot(matrix, x, axes=([1], [axis]))
    return np.moveaxis(moved, 0, axis)


def upsample_trilinear(x: np.ndarray, factor: int = 2) -> np.ndarray:
    _check_activation(x)
    out = x
    for axis in (1, 2, 3):
        out = _apply_axis(out, linear_upsample_matrix(x.shape[axis], factor, x.dtype), axis)
    return np.ascontiguousarray(out)


def upsample_trilinear_backward(grad_out: np.ndarray, factor: int = 2) -> np.ndarray:
    """Transpose of upsample_trilinear."""
    _check_activation(grad_out, "grad_out")
    grad = grad_out
    for axis in (1, 2, 3):
        if grad_out.shape[axis] % factor:
            raise ShapeError(f"grad_out dims {grad_out.shape[1:]} not divisible by {factor}")
        matrix = linear_upsample_matrix(grad_out.shape[axis] // factor, factor, grad_out.dtype)
        grad = _apply_axis(grad, matrix.T, axis)
    return np.ascontiguousarray(grad)


# =============================================================================
# ACTIVATIONS
# =============================================================================

def leaky_relu(x: np.ndarray, alpha: float = 0.1, out: Optional[np.ndarray] = None) -> np.ndarray:
    out = _output(out, x.shape, x.dtype)
    np.multiply(x, x.dtype.type(alpha), out=out)
    np.copyto(out, x, where=x > 0)
    return out


def leaky_relu_backward(x: np.ndarray, grad_out: np.ndarray, alpha: float = 0.1) -> np.ndarray:
    return np.where(x > 0, grad_out, grad_out * grad_out.dtype.type(alpha))


def dropout(
    x: np.ndarray, rate: float, rng: Optional[np.random.Generator] = None, training: bool = False
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Inverted dropout.

    Returns:
        tuple: (output, mask) where mask is None when the op is the identity
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def dropout_backward(grad_out: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return grad_out if mask is None else grad_out * mask


def sigmoid(x: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    return special.expit(x, out=_output(out, x.shape, x.dtype))


def sigmoid_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient through sigmoid given its output y."""
    return grad_out * y * (1 - y)


def softmax_channels(x: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-voxel softmax over axis 0, max-shifted."""
    out = _output(out, x.shape, x.dtype)
    np.subtract(x, x.max(axis=0, keepdims=True), out=out)
    np.exp(out, out=out)
    out /= out.sum(axis=0, keepdims=True)
    return out


def softmax_channels_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient through the channel softmax given its output y."""
    return y * (grad_out - np.sum(grad_out * y, axis=0, keepdims=True))


# =============================================================================
# COMBINATION
# =============================================================================

def concat_channels(a: np.ndarray, b: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    _check_activation(a, "a")
    _check_activation(b, "b")
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"spatial dims differ: {a.shape[1:]} vs {b.shape[1:]}")
    out = _output(out, (a.shape[0] + b.shape[0],) + a.shape[1:], np.result_type(a, b))
    return np.concatenate([a, b], axis=0, out=out)


def concat_channels_backward(grad_out: np.ndarray, channels_a: int) -> Tuple[np.ndarray, np.ndarray]:
    return grad_out[:channels_a], grad_out[channels_a:]


def elementwise_mul(a: np.ndarray, b: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    return np.multiply(a, b, out=_output(out, a.shape, np.result_type(a, b)))


def elementwise_mul_backward(a: np.ndarray, b: np.ndarray, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return grad_out * b, grad_out * a


# =============================================================================
# INITIALIZATION
# =============================================================================

def he_init(shape, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """He normal: N(0, sqrt(2 / fan_in)), fan_in = C_in * kz * ky * kx."""
    shape = tuple(int(s) for s in shape)
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


def zero_bias(channels: int, dtype=np.float32) -> np.ndarray:
    return np.zeros(channels, dtype=dtype)


def one_hot(labels: np.ndarray, classes: int, dtype=np.float32) -> np.ndarray:
    """[Z, Y, X] integer labels -> [C, Z, Y, X]."""
    labels = np.asarray(labels)
    if labels.size and labels.max() >= classes:
        raise ValueError(f"label {int(labels.max())} out of range for {classes} classes")
    return (np.arange(classes).reshape(-1, 1, 1, 1) == labels[None]).astype(dtype)
