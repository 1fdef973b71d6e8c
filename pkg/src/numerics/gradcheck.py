"""
Central finite-difference check of autodiff gradients
"""
from typing import Callable, List, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def numerical_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    h: float = 1e-4,
    indices: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Central differences of the scalar ``fn()`` with respect to ``tensor``.

    Args:
        fn: Recomputes the loss from the current tensor values
        tensor: Tensor whose entries are perturbed in place
        h: Step size
        indices: Flat indices to perturb; all entries when None

    Returns:
        np.ndarray: Gradient estimate (zeros at entries not perturbed)
    """
    values = tensor.data
    estimate = np.zeros(values.size, dtype=values.dtype)
    chosen = np.arange(values.size) if indices is None else indices
    for i in chosen:
        position = np.unravel_index(i, values.shape)
        original = values[position]
        with no_grad():
            values[position] = original + h
            plus = fn().item()
            values[position] = original - h
            minus = fn().item()
        values[position] = original
        estimate[i] = (plus - minus) / (2 * h)
    return estimate.reshape(values.shape)


def max_relative_error(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Largest per-tensor relative error between autodiff and finite differences.

    The error for one tensor is ``max|a - n| / max(max|a|, max|n|, 1e-12)``
    over the checked entries.

    Args:
        fn: Builds the scalar loss; must be deterministic
        tensors: Leaf tensors with ``requires_grad=True``
        h: Finite-difference step
        max_entries: Sample at most this many entries per tensor
        seed: Sampling seed

    Returns:
        float: Worst relative error over all tensors
    """
    for tensor in tensors:
        tensor.grad = None
    backward(fn())
    analytic: List[np.ndarray] = [
        np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors
    ]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for tensor, grad in zip(tensors, analytic):
        size = tensor.data.size
        if max_entries is not None and size > max_entries:
            indices = np.sort(rng.choice(size, size=max_entries, replace=False))
        else:
            indices = np.arange(size)
        numeric = numerical_gradient(fn, tensor, h=h, indices=indices).reshape(-1)[indices]
        exact = grad.reshape(-1)[indices]
        scale = max(np.abs(exact).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
        worst = max(worst, float(np.abs(exact - numeric).max(initial=0.0) / scale))
    return worst
