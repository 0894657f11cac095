"""Minimal dense tensors with tape-based reverse-mode differentiation."""

from . import ops
from .gradcheck import finite_diff_check
from .params import ParamStore, uniform_init
from .tensor import Tape, Tensor, as_tensor, backward, no_tape, record

__all__ = [
    "ParamStore", "Tape", "Tensor", "as_tensor", "backward", "finite_diff_check",
    "no_tape", "ops", "record", "uniform_init",
]
