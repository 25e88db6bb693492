"""Minimal dense-tensor engine with reverse-mode differentiation."""
from . import ops
from .gradcheck import GradCheckReport, grad_check
from .nn import Conv2d, Linear, Module, parameter
from .ops import (
    bce_loss, concat, concat_last, conv2d, l2_normalize_rows, leaky_relu, matmul, relu, sigmoid, tanh,
)
from .optim import Adam, AdamState, adam_step
from .rng import generator, randn
from .tensor import FrozenParameterError, Tape, TapeError, Tensor, grad, no_grad, shadow64

__all__ = [
    "Adam", "AdamState", "Conv2d", "FrozenParameterError", "GradCheckReport", "Linear", "Module",
    "Tape", "TapeError", "Tensor", "adam_step", "bce_loss", "concat", "concat_last", "conv2d",
    "generator", "grad", "grad_check", "l2_normalize_rows", "leaky_relu", "matmul", "no_grad", "ops",
    "parameter", "randn", "relu", "shadow64", "sigmoid", "tanh",
]
