"""Differentiable-array substrate: tensors, ops, modules, gradient audit."""

from .tensor import Parameter, Tensor, as_tensor, backward, no_grad, zero_grads
from .module import (Conv2d, DepthwiseConv2d, Down2, Linear, Module, Up2,
                     fan_in_uniform)
from .gradcheck import GradCheckReport, grad_check
from . import ops

__all__ = [
    "Parameter", "Tensor", "as_tensor", "backward", "no_grad", "zero_grads",
    "Conv2d", "DepthwiseConv2d", "Down2", "Linear", "Module", "Up2",
    "fan_in_uniform", "GradCheckReport", "grad_check", "ops",
]
