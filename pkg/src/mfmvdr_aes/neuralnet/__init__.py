"""Differentiable building blocks for the parameter estimator.

Built on torch autograd. Complex quantities are carried as paired real
tensors throughout.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (CausalConv1d, ComplexGRU, FullyConnected, GRULayer, TCN, TCNBlock,
                     autodiff_backward, receptive_field)

__all__ = [
    "CausalConv1d", "ComplexGRU", "FullyConnected", "GRULayer", "TCN", "TCNBlock",
    "autodiff_backward", "receptive_field", "load_checkpoint", "save_checkpoint",
]
