from .core import (
    DTYPE,
    Function,
    GraphError,
    NonFiniteError,
    ShapeError,
    Value,
    as_value,
    grad,
    is_grad_enabled,
    no_grad,
    set_grad_enabled,
)
from .conv import conv, conv2d, conv3d
from .ops import (
    abs,
    broadcast_to,
    concat,
    dense,
    div,
    exp,
    getitem,
    l2_norm_per_sample,
    leaky_relu,
    log,
    matmul,
    mean,
    pad,
    power,
    relu,
    reshape,
    sqrt,
    square,
    stack,
    sum,
    sum_to,
    tanh,
    transpose,
)
from .gradcheck import check_gradients, numerical_grad, relative_error
from .penalty import gradient_penalty

__all__ = [
    "DTYPE",
    "Function",
    "GraphError",
    "NonFiniteError",
    "ShapeError",
    "Value",
    "abs",
    "as_value",
    "broadcast_to",
    "check_gradients",
    "concat",
    "conv",
    "conv2d",
    "conv3d",
    "dense",
    "div",
    "exp",
    "getitem",
    "grad",
    "gradient_penalty",
    "is_grad_enabled",
    "l2_norm_per_sample",
    "leaky_relu",
    "log",
    "matmul",
    "mean",
    "no_grad",
    "numerical_grad",
    "pad",
    "power",
    "relative_error",
    "relu",
    "reshape",
    "set_grad_enabled",
    "sqrt",
    "square",
    "stack",
    "sum",
    "sum_to",
    "tanh",
    "transpose",
]

