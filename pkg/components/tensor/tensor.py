"""
Dense double-precision tensor with a recording tape.

Every differentiable operation is a `Function` subclass (see `components/tensor/ops.py`).
`Function.apply` runs the forward pass on raw arrays and, when any input tracks
gradients, records a `TapeNode` on the output. `backward` walks those nodes in
reverse topological order and accumulates into the `.grad` buffers of leaves.

Gradients accumulate across calls; call `zero_grad` (or `Tensor.zero_grad`)
between optimisation steps.
"""
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from components.errors import GraphError, NumericError, ShapeError

logger = logging.getLogger(__name__)

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording a tape (inference, evaluation)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


@dataclass
class TapeNode:
    op: str
    function: "Function"
    inputs: Tuple["Tensor", ...]


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on numpy arrays and `backward`, which receives
    dL/d(output) and returns one gradient (or None) per tensor input, in order.
    Anything backward needs is stashed on `self` during forward.
    """

    name = "function"

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{self.name}: forward not implemented")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{self.name}: backward not implemented")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        func = cls()
        out = func.forward(*(t.data for t in tensors), **kwargs)
        out = np.asarray(out, dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"{cls.name} produced non-finite values", component=cls.name)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        node = TapeNode(cls.name, func, tuple(tensors)) if requires_grad else None
        return Tensor._wrap(out, requires_grad, node)


class Tensor:
    """
    Images and feature maps are 4-D (batch, channels, height, width); reductions
    produce 0-D scalars and the Gram operation a 2-D matrix.
    """

    def __init__(self, data: Any, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor built from non-finite values")
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node: Optional[TapeNode] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool, node: Optional[TapeNode]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = requires_grad
        out.node = node
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False, None)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # operator sugar; the actual ops live in ops.py
    def __add__(self, other: Any) -> "Tensor":
        from components.tensor import ops
        return ops.add(self, other) if isinstance(other, Tensor) else ops.shift(self, other)

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Tensor":
        from components.tensor import ops
        return ops.sub(self, other) if isinstance(other, Tensor) else ops.shift(self, -other)

    def __rsub__(self, other: Any) -> "Tensor":
        from components.tensor import ops
        return ops.shift(ops.scale(self, -1.0), other)

    def __mul__(self, other: Any) -> "Tensor":
        from components.tensor import ops
        return ops.mul(self, other) if isinstance(other, Tensor) else ops.scale(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from components.tensor import ops
        return ops.scale(self, -1.0)

    def __truediv__(self, other: float) -> "Tensor":
        from components.tensor import ops
        return ops.scale(self, 1.0 / other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        op = f", op={self.node.op}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{flag}{op})"


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for parent in tensor.node.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every requires_grad leaf reachable from the scalar `loss`."""
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("backward through an untracked tensor")
    if loss.node is None:
        _accumulate(loss, np.ones_like(loss.data))
        return

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for tensor in reversed(_topological_order(loss)):
        grad = grads.pop(id(tensor), None)
        if grad is None:
            continue
        if tensor.node is None:
            _accumulate(tensor, grad)
            continue
        input_grads = tensor.node.function.backward(grad)
        for parent, parent_grad in zip(tensor.node.inputs, input_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent_grad.shape != parent.data.shape:
                raise GraphError(
                    f"{tensor.node.op} returned gradient {parent_grad.shape} for input {parent.data.shape}")
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad


def _accumulate(leaf: Tensor, grad: np.ndarray) -> None:
    leaf.grad = grad.copy() if leaf.grad is None else leaf.grad + grad


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for tensor in tensors:
        tensor.grad = None
