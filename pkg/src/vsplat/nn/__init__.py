"""Dense-tensor autodiff core, layers, optimizer, checkpointing."""

from . import tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Conv2d, LayerNorm, Linear, Mlp, Module, MultiHeadAttention, parameter
from .optim import Adam, OptimizerState, adam_step
from .tensor import Tensor

__all__ = [
    "tensor",
    "Tensor",
    "Module",
    "Linear",
    "LayerNorm",
    "Mlp",
    "MultiHeadAttention",
    "Conv2d",
    "parameter",
    "Adam",
    "OptimizerState",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]
