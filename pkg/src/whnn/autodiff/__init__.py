"""Reverse-mode automatic differentiation over dense numpy tensors."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, numerical_grad, relative_error
from .module import MLP, LayerNorm, Linear, Module
from .optim import Adam, AdamState, adam_step
from .tensor import (
    NonFiniteError,
    Tape,
    TapeError,
    Tensor,
    as_tensor,
    backward,
    debug_mode,
    no_grad,
    set_debug,
)

__all__ = [
    "ops", "Tensor", "Tape", "TapeError", "NonFiniteError", "as_tensor", "backward",
    "no_grad", "debug_mode", "set_debug", "Adam", "AdamState", "adam_step", "grad_check",
    "numerical_grad", "relative_error", "Module", "Linear", "LayerNorm", "MLP",
    "save_checkpoint", "load_checkpoint",
]
