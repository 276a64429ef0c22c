"""Define-by-run reverse-mode differentiation over dense numpy arrays.

Every differentiable operation is a :class:`Function` subclass.  Calling
``SomeOp.apply(*tensors)`` runs ``forward`` on the raw arrays and, when any
input requires a gradient, records the function instance on the output so
that :func:`backward` can replay the adjoints in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import ContractError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation only)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """An n-dimensional array that may participate in a differentiation graph."""

    __slots__ = ("values", "requires_grad", "grad", "_fn", "_inputs", "name")

    def __init__(self, values, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(values)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.values: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._fn: Optional[Function] = None
        self._inputs: tuple = ()
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return float(self.values.item())

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Tensor":
        return Tensor(self.values, dtype=self.values.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; the op classes live in ``ops`` to keep this module free
    # of numerical detail.
    def __add__(self, other):
        from . import ops

        return ops.add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, _as_tensor(other, self))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from . import ops

        return ops.mul(self, Tensor(np.array(-1.0, dtype=self.dtype)))

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


class Function:
    """Base class of a differentiable operation.

    ``forward`` receives numpy arrays (plus keyword options) and returns the
    output array; it may stash whatever ``backward`` needs on ``self``.
    ``backward`` receives the output adjoint and returns one adjoint (or
    ``None``) per positional input.
    """

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls()
        out = Tensor(fn.forward(*(t.values for t in inputs), **kwargs))
        if _grad_enabled and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._fn = fn
            out._inputs = inputs
        return out


def topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root`` such that inputs precede their consumers."""
    order: list = []
    seen: set = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._inputs):
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, wrt: Optional[Iterable[Tensor]] = None):
    """Populate ``.grad`` of every tensor that requires grad and feeds ``loss``.

    Gradients are overwritten, not accumulated, so a fresh forward pass
    followed by ``backward`` always yields the same result.  When ``wrt`` is
    given, the gradients of those tensors are returned in order; tensors the
    loss does not depend on receive zeros.
    """
    if loss.values.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topological_order(loss)
    grads = {id(loss): np.ones_like(loss.values)}
    for node in reversed(order):
        g = grads.get(id(node))
        if node.requires_grad:
            node.grad = g if g is not None else np.zeros_like(node.values)
        if node._fn is None or g is None:
            continue
        for parent, pg in zip(node._inputs, node._fn.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if wrt is None:
        return None
    result = []
    for t in wrt:
        g = grads.get(id(t))
        if g is None:
            g = np.zeros_like(t.values)
            t.grad = g
        result.append(g)
    return result
