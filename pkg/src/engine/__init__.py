from src.engine.ops import (
    ShapeError,
    conv3d,
    conv3d_backward,
    avg_pool3d,
    avg_pool3d_backward,
    upsample_trilinear,
    upsample_trilinear_backward,
    leaky_relu,
    leaky_relu_backward,
    dropout,
    dropout_backward,
    sigmoid,
    sigmoid_backward,
    softmax_channels,
    softmax_channels_backward,
    concat_channels,
    concat_channels_backward,
    elementwise_mul,
    elementwise_mul_backward,
    he_init,
    zero_bias,
    one_hot
)
from src.engine.rng import make_rng
from src.engine.gradcheck import numerical_gradient, relative_error

__all__ = [
    'ShapeError',
    'conv3d',
    'conv3d_backward',
    'avg_pool3d',
    'avg_pool3d_backward',
    'upsample_trilinear',
    'upsample_trilinear_backward',
    'leaky_relu',
    'leaky_relu_backward',
    'dropout',
    'dropout_backward',
    'sigmoid',
    'sigmoid_backward',
    'softmax_channels',
    'softmax_channels_backward',
    'concat_channels',
    'concat_channels_backward',
    'elementwise_mul',
    'elementwise_mul_backward',
    'he_init',
    'zero_bias',
    'one_hot',
    'make_rng',
    'numerical_gradient',
    'relative_error'
]
