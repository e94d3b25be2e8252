"""Minimal dense-array numeric core: tensors, reverse-mode autodiff, NN
kernels, a deterministic RNG and an Adam optimizer."""

from . import nnops
from .optim import Adam, Gradient, grad
from .rng import PHILOX, Rng, gaussian
from .tensor import (
    SUPPORTED_DTYPES,
    Tensor,
    add,
    add_scalar,
    backward,
    concat_channels,
    grad_enabled,
    matmul,
    mean_all,
    mul,
    no_grad,
    reshape,
    scale,
    silu,
    sub,
    sum_all,
    tanh,
)

__all__ = [
    "Adam",
    "Gradient",
    "PHILOX",
    "Rng",
    "SUPPORTED_DTYPES",
    "Tensor",
    "add",
    "add_scalar",
    "backward",
    "concat_channels",
    "gaussian",
    "grad",
    "grad_enabled",
    "matmul",
    "mean_all",
    "mul",
    "nnops",
    "no_grad",
    "reshape",
    "scale",
    "silu",
    "sub",
    "sum_all",
    "tanh",
]
