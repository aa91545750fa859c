"""Minimal reverse-mode autodiff with the layers the de-limiter networks use."""

from .tensor import Tensor, as_tensor, parameter
from .ops import (
    NORM_KINDS,
    RunningStats,
    ShapeError,
    conv1d,
    conv1d_transposed,
    conv_output_length,
    neg_si_sdr,
    normalize,
    prelu,
    relu,
    sigmoid,
)
from .optim import adam_init, adam_step
from .gradcheck import grad_check, numeric_gradient
from .serialize import tensor_from_bytes, tensor_to_bytes

__all__ = [
    "Tensor", "as_tensor", "parameter", "NORM_KINDS", "RunningStats", "ShapeError",
    "conv1d", "conv1d_transposed", "conv_output_length", "neg_si_sdr", "normalize",
    "prelu", "relu", "sigmoid", "adam_init", "adam_step", "grad_check",
    "numeric_gradient", "tensor_from_bytes", "tensor_to_bytes",
]
