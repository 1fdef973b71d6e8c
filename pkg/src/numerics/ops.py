"""
Differentiable primitives

Every primitive takes ``Tensor`` (or array-like) operands, computes its
result with numpy and records a backward rule when an operand requires grad.
"""
import math
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, record
from ..utils.constants import LAYER_NORM_EPS
from ..utils.exceptions import ShapeError

GELU_COEFF = 0.044715
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(kind, a.shape, b.shape) from None


def _const(value, like: Tensor) -> np.ndarray:
    if isinstance(value, Tensor):
        return value.data
    return np.asarray(value, dtype=like.dtype)


# Elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return record("mul", a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record("neg", -a.data, (a,), lambda g: (-g,))


# Linear algebra and layout

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch dimensions") from None

    def rule(g):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return record("matmul", np.matmul(a.data, b.data), (a, b), rule)


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        axes = list(range(a.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, axes, detail="axes must permute the operand axes")
    inverse = tuple(np.argsort(axes))
    return record("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def concatenate(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concatenate: nothing to concatenate")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concatenate", *(t.shape for t in tensors)) from None
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record("concatenate", out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


# Reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record("sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,), rule)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size // max(np.asarray(out).size, 1)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return record("mean", out, (a,), rule)


# Activations and normalization

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=axis, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (a,), rule)


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _SQRT_2_OVER_PI * (x + GELU_COEFF * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def rule(g):
        d_inner = _SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner),)

    return record("gelu", out, (a,), rule)


def layer_norm(x, scale=None, shift=None, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis, then apply the optional affine pair."""
    x = as_tensor(x)
    operands = [x]
    if scale is not None:
        scale = as_tensor(scale)
        if scale.shape != x.shape[-1:]:
            raise ShapeError("layer_norm", x.shape, scale.shape, detail="scale")
        operands.append(scale)
    if shift is not None:
        shift = as_tensor(shift)
        if shift.shape != x.shape[-1:]:
            raise ShapeError("layer_norm", x.shape, shift.shape, detail="shift")
        operands.append(shift)

    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std
    out = normed
    if scale is not None:
        out = out * scale.data
    if shift is not None:
        out = out + shift.data

    def rule(g):
        reduce_axes = tuple(range(g.ndim - 1))
        g_normed = g * scale.data if scale is not None else g
        grad_x = inv_std * (
            g_normed
            - g_normed.mean(axis=-1, keepdims=True)
            - normed * (g_normed * normed).mean(axis=-1, keepdims=True)
        )
        grads = [grad_x]
        if scale is not None:
            grads.append((g * normed).sum(axis=reduce_axes))
        if shift is not None:
            grads.append(g.sum(axis=reduce_axes))
        return tuple(grads)

    return record("layer_norm", out, operands, rule)


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight (+ bias); weight is (in, out)."""
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def dropout(x, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep, dtype=x.dtype))


# Losses

def l1_loss(predicted, target, mask=None) -> Tensor:
    """
    Mean absolute error over the positions selected by ``mask``.

    Args:
        predicted: (..., D) prediction
        target: (..., D) constant target
        mask: (...) weights over positions; None selects every position

    Returns:
        Tensor: Scalar; 0 when no position is selected
    """
    predicted = as_tensor(predicted)
    target = _const(target, predicted)
    if target.shape != predicted.shape:
        raise ShapeError("l1_loss", predicted.shape, target.shape)
    if mask is None:
        weights = np.ones(predicted.shape[:-1], dtype=predicted.dtype)
    else:
        weights = _const(mask, predicted).astype(predicted.dtype)
        if weights.shape != predicted.shape[:-1]:
            raise ShapeError("l1_loss", predicted.shape, weights.shape, detail="mask")
    weights = weights[..., None]
    denominator = float(weights.sum()) * predicted.shape[-1]
    diff = predicted.data - target

    if denominator == 0.0:
        value = np.zeros((), dtype=predicted.dtype)
        return record("l1_loss", value, (predicted,), lambda g: (np.zeros_like(predicted.data),))

    value = np.asarray((np.abs(diff) * weights).sum() / denominator, dtype=predicted.dtype)
    return record("l1_loss", value, (predicted,),
                  lambda g: (g * np.sign(diff) * weights / denominator,))


def cross_entropy(logits, targets, weights=None) -> Tensor:
    """
    Weighted mean negative log-likelihood of integer targets.

    Args:
        logits: (..., C) unnormalized scores
        targets: (...) integer class ids
        weights: (...) per-position weights; padding gets 0

    Returns:
        Tensor: Scalar; 0 when every weight is 0
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError("cross_entropy", logits.shape, targets.shape)
    num_classes = logits.shape[-1]
    flat_logits = logits.data.reshape(-1, num_classes)
    flat_targets = targets.reshape(-1)
    if flat_targets.size and (flat_targets.min() < 0 or flat_targets.max() >= num_classes):
        raise ShapeError("cross_entropy", logits.shape, targets.shape,
                         detail=f"target ids must lie in [0, {num_classes})")
    if weights is None:
        flat_weights = np.ones(flat_targets.shape, dtype=logits.dtype)
    else:
        flat_weights = np.asarray(weights, dtype=logits.dtype).reshape(-1)
        if flat_weights.shape != flat_targets.shape:
            raise ShapeError("cross_entropy", targets.shape, np.shape(weights), detail="weights")
    total = float(flat_weights.sum())

    shifted = flat_logits - flat_logits.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    rows = np.arange(flat_targets.size)

    if total == 0.0:
        value = np.zeros((), dtype=logits.dtype)
        return record("cross_entropy", value, (logits,), lambda g: (np.zeros_like(logits.data),))

    picked = log_probs[rows, flat_targets]
    value = np.asarray(-(picked * flat_weights).sum() / total, dtype=logits.dtype)

    def rule(g):
        grad = np.exp(log_probs)
        grad[rows, flat_targets] -= 1.0
        grad *= (flat_weights / total)[:, None] * g
        return (grad.reshape(logits.shape),)

    return record("cross_entropy", value, (logits,), rule)


PRIMITIVES: Dict[str, Callable[..., Tensor]] = {
    "add": add,
    "broadcast_add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "matmul": matmul,
    "transpose": transpose,
    "reshape": reshape,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "gelu": gelu,
    "l1_loss": l1_loss,
    "cross_entropy": cross_entropy,
    "mean": mean,
    "sum": sum,
    "concatenate": concatenate,
    "linear": linear,
}


def forward_primitive(op_kind: str, *inputs, **kwargs) -> Tensor:
    """
    Dispatch a primitive by name.

    Args:
        op_kind (str): Key of ``PRIMITIVES``
        *inputs: Operands
        **kwargs: Primitive options (axis, shape, mask, ...)

    Returns:
        Tensor: Result, recorded when any operand requires grad
    """
    try:
        fn = PRIMITIVES[op_kind]
    except KeyError:
        raise ValueError(f"Unknown primitive '{op_kind}'. Known: {sorted(PRIMITIVES)}") from None
    return fn(*inputs, **kwargs)
