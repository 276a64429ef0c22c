"""Minimal reverse-mode automatic differentiation engine."""

from .gradcheck import grad_check, grad_check_params, numerical_gradient, relative_error
from .ops import (
    activation,
    add,
    broadcast_add_cols,
    concat,
    conv2d,
    conv_output_size,
    matmul,
    mul,
    pool,
    reshape,
    scale_cols,
    scale_rows,
    sigmoid,
    softmax,
    square,
    sub,
    sum_all,
    tanh,
    transpose,
)
from .tensor import Function, Tensor, backward, is_grad_enabled, no_grad, topological_order

__all__ = [
    "Function",
    "Tensor",
    "activation",
    "add",
    "backward",
    "broadcast_add_cols",
    "concat",
    "conv2d",
    "conv_output_size",
    "grad_check",
    "grad_check_params",
    "is_grad_enabled",
    "matmul",
    "mul",
    "no_grad",
    "numerical_gradient",
    "pool",
    "relative_error",
    "reshape",
    "scale_cols",
    "scale_rows",
    "sigmoid",
    "softmax",
    "square",
    "sub",
    "sum_all",
    "tanh",
    "topological_order",
    "transpose",
]
