"""Small float64 neural-network toolkit: GRU, dense, losses, Adam, grad checks."""

from .core import (
    Dense,
    Dropout,
    Param,
    binary_xent,
    dense,
    dropout,
    glorot_uniform,
    sigmoid,
    softmax,
    softmax_xent,
)
from .gradcheck import grad_check
from .gru import GRULayer, gru_backward, gru_forward
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "Dense",
    "Dropout",
    "GRULayer",
    "Param",
    "adam_step",
    "binary_xent",
    "dense",
    "dropout",
    "glorot_uniform",
    "grad_check",
    "gru_backward",
    "gru_forward",
    "sigmoid",
    "softmax",
    "softmax_xent",
]
