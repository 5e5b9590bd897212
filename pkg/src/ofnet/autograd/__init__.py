from .ops import (
    ConvSpec,
    add,
    add_n,
    atan2,
    bilinear_upsample,
    concat,
    concat_channels,
    conv2d,
    crop,
    mul,
    pointwise,
    relu,
    scale,
    sigmoid,
    slice_channels,
    square,
    tanh,
    tensor_sum,
)
from .optim import OptimState, optimizer_step
from .tensor import DEFAULT_DTYPE, Tensor, backward

__all__ = [
    "DEFAULT_DTYPE",
    "ConvSpec",
    "OptimState",
    "Tensor",
    "add",
    "add_n",
    "atan2",
    "backward",
    "bilinear_upsample",
    "concat",
    "concat_channels",
    "conv2d",
    "crop",
    "mul",
    "optimizer_step",
    "pointwise",
    "relu",
    "scale",
    "sigmoid",
    "slice_channels",
    "square",
    "tanh",
    "tensor_sum",
]
