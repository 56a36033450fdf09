"""Minimal dense-tensor reverse-mode autodiff and a small tappable conv net."""

from qad.nn.tensor import Tensor, no_grad, grad_enabled
from qad.nn.layers import (
    Conv2d,
    Dense,
    Flatten,
    ForwardResult,
    MaxPool2d,
    ModelSpec,
    ParameterSet,
    Relu,
    cross_entropy,
    default_model_spec,
    forward,
    init_params,
    sigma_loss,
    softmax_temperature,
)
from qad.nn.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "Conv2d",
    "Dense",
    "Flatten",
    "MaxPool2d",
    "Relu",
    "ModelSpec",
    "ParameterSet",
    "ForwardResult",
    "forward",
    "init_params",
    "default_model_spec",
    "softmax_temperature",
    "sigma_loss",
    "cross_entropy",
    "save_checkpoint",
    "load_checkpoint",
]
