"""Minimal reverse-mode autodiff over float64 arrays."""

from . import ops
from .gradcheck import GradCheckReport, grad_check, relative_error
from .ops import (clamp, concat, conv2d, div, elementwise, exp, index, log, matmul, maximum,
                  mean, minimum, power, reduce, relu, reshape, sigmoid, stack, take, transpose)
from .optim import sgd_step
from .tape import (DiffArray, Parameter, Tape, as_array, inject_fault, parameters_grad_norm,
                   stop_gradient)

__all__ = [
    "DiffArray", "GradCheckReport", "Parameter", "Tape", "as_array", "clamp", "concat",
    "conv2d", "div", "elementwise", "exp", "grad_check", "index", "inject_fault", "log",
    "matmul", "maximum", "mean", "minimum", "ops", "parameters_grad_norm", "power", "reduce",
    "relative_error", "relu", "reshape", "sgd_step", "sigmoid", "stack", "stop_gradient",
    "take", "transpose",
]
