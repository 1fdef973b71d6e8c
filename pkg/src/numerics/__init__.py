"""
Minimal tensor arithmetic with reverse-mode differentiation and AdamW
"""
from .tensor import (
    Tape,
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_default_dtype,
)
from .ops import (
    PRIMITIVES,
    add,
    concatenate,
    cross_entropy,
    dropout,
    forward_primitive,
    gelu,
    l1_loss,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    softmax,
    sub,
    transpose,
)
from .ops import sum as sum_
from .optim import AdamW, AdamWState, adamw_step

__all__ = [
    "AdamW", "AdamWState", "PRIMITIVES", "Tape", "Tensor", "adamw_step", "add", "as_tensor",
    "backward", "concatenate", "cross_entropy", "default_dtype", "dropout", "forward_primitive",
    "gelu", "get_default_dtype", "is_grad_enabled", "l1_loss", "layer_norm", "linear", "matmul",
    "mean", "mul", "neg", "no_grad", "reshape", "set_default_dtype", "softmax", "sub", "sum_",
    "transpose",
]
