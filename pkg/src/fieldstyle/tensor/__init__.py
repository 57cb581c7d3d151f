"""Reverse-mode autodiff substrate used by every trainable component."""
from .core import *  # noqa: F401,F403
from .core import __all__ as _core_all
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import MLP, Conv2d, Linear, Module, parameter, zero_module
from .optim import Adam, AdamState, adam_step

__all__ = list(_core_all) + [
    "Module", "Linear", "Conv2d", "MLP", "parameter",
    "Adam", "AdamState", "adam_step", "save_checkpoint", "load_checkpoint",
]
