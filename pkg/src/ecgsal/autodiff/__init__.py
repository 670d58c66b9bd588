"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import SGDMomentum, gradient_descent_step, sgd_momentum_step
from .tensor import ContractError, ShapeError, Tape, Tensor, active_tape, backward

__all__ = [
    "CheckpointError",
    "ContractError",
    "SGDMomentum",
    "ShapeError",
    "Tape",
    "Tensor",
    "active_tape",
    "backward",
    "gradient_descent_step",
    "load_checkpoint",
    "ops",
    "save_checkpoint",
    "sgd_momentum_step",
]
