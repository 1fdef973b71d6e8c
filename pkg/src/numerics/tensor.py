"""
Dense tensors with reverse-mode automatic differentiation
"""
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..utils.exceptions import ShapeError

_state = threading.local()
_default_dtype = np.float32


def get_default_dtype():
    """Build-wide floating precision for new tensors."""
    return _default_dtype


def set_default_dtype(dtype) -> None:
    """
    Switch the build-wide precision.

    Args:
        dtype: ``np.float32`` (training) or ``np.float64`` (gradient checks)
    """
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"Unsupported precision {dtype!r}; use float32 or float64")
    _default_dtype = dtype


@contextmanager
def default_dtype(dtype) -> Iterator[None]:
    previous = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording on the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """n-dimensional array that can take part in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_op", "name", "__weakref__")
    __array_ufunc__ = None  # numpy defers to the reflected operators below

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        array = np.asarray(data, dtype=dtype if dtype is not None else get_default_dtype())
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._op: Optional["Operation"] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._op is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"

    # Operator sugar; the primitives live in ops.py
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import neg
        return neg(self)

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Operation:
    """One recorded primitive: its inputs and how to push a gradient back through it."""

    kind: str
    inputs: Tuple[Tensor, ...]
    backward: BackwardRule


def record(kind: str, output: np.ndarray, inputs: Sequence[Tensor], rule: BackwardRule) -> Tensor:
    """
    Wrap a primitive's result, recording it when any input requires grad.

    Args:
        kind (str): Primitive name
        output (np.ndarray): Forward result
        inputs: Operand tensors
        rule: Maps the output gradient to one gradient per input

    Returns:
        Tensor: Result tensor
    """
    needs_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    result = Tensor(output, requires_grad=needs_grad, dtype=output.dtype)
    if needs_grad:
        result._op = Operation(kind, tuple(inputs), rule)
    return result


class Tape:
    """Recorded operations reachable from one output, in topological order."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._op is not None:
                for parent in node._op.inputs:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    @property
    def operations(self) -> List[Operation]:
        return [node._op for node in self.nodes if node._op is not None]

    def __len__(self) -> int:
        return len(self.operations)


def backward(loss: Tensor) -> None:
    """
    Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    Gradients accumulate, so a tensor used several times (a shared layer block
    used by every layer) receives the sum of its per-use gradients.

    Args:
        loss (Tensor): Scalar loss

    Raises:
        ShapeError: If the loss is not a scalar
        ValueError: If nothing was recorded for the loss
    """
    if loss.data.size != 1:
        raise ShapeError("backward", loss.shape, (), detail="loss must be a scalar")
    if not loss.requires_grad or loss._op is None:
        raise ValueError("backward: loss has no recorded operations (empty tape)")

    tape = Tape.trace(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for node in reversed(tape.nodes):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        node.grad = grad if node.grad is None else node.grad + grad
        if node._op is None:
            continue
        for parent, parent_grad in zip(node._op.inputs, node._op.backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = parent_grad
