"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from .tensor import ShapeError, Tensor
from .ops import (
    add, as_tensor, concat, concat_cols, conv1d, exp, gru_sequence, index, matmul,
    max_pool1d, mean, mul, reshape, rmse_loss, scale, sigmoid, softmax_rows, sqrt,
    square, sub, sum, tanh, transpose,
)
from .gradcheck import check_gradients, max_relative_error, numerical_gradient

__all__ = [
    "Tensor", "ShapeError", "add", "as_tensor", "concat", "concat_cols", "conv1d", "exp",
    "gru_sequence", "index", "matmul", "max_pool1d", "mean", "mul", "reshape", "rmse_loss",
    "scale", "sigmoid", "softmax_rows", "sqrt", "square", "sub", "sum", "tanh", "transpose",
    "check_gradients", "numerical_gradient", "max_relative_error",
]
