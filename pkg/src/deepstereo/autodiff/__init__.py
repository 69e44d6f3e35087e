from .tensor import (
    Tape,
    Tensor,
    active_tape,
    backward,
    default_dtype,
    get_default_dtype,
    no_grad,
    set_default_dtype,
)
from . import convnd, ops

__all__ = [
    "Tape",
    "Tensor",
    "active_tape",
    "backward",
    "convnd",
    "default_dtype",
    "get_default_dtype",
    "no_grad",
    "ops",
    "set_default_dtype",
]
