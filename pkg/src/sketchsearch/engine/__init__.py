"""Minimal reverse-mode training engine: autodiff ops, sequential nets,
Adam, and a finite-difference gradient checker."""

from . import autodiff
from .autodiff import Var, stop_gradient
from .gradcheck import check_scalar_loss, finite_diff_check
from .net import (
    LayerDef,
    NetworkDef,
    ShapeError,
    Tape,
    TapeError,
    affine,
    backprop,
    conv,
    forward,
    leaky_relu,
    reshape,
    sigmoid,
    upsample2x,
)
from .optim import AdamState, TrainingError, adam_step

__all__ = [
    "AdamState",
    "LayerDef",
    "NetworkDef",
    "ShapeError",
    "Tape",
    "TapeError",
    "TrainingError",
    "Var",
    "adam_step",
    "affine",
    "autodiff",
    "backprop",
    "check_scalar_loss",
    "conv",
    "finite_diff_check",
    "forward",
    "leaky_relu",
    "reshape",
    "sigmoid",
    "stop_gradient",
    "upsample2x",
]
