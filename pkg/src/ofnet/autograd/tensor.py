"""Dense tensor with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array.  Every differentiable op in
:mod:`ofnet.autograd.ops` builds its output with :meth:`Tensor.from_op`,
attaching the parent tensors and a closure mapping the output gradient to
one gradient per parent.  :func:`backward` walks the graph in reverse
topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..exceptions import UsageError

DEFAULT_DTYPE = np.float32

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """N-dimensional real array with an optional gradient slot.

    Feature maps use NCHW order.  ``grad`` is only populated on leaf tensors
    created with ``requires_grad=True`` (parameters); intermediate gradients
    are discarded once propagated.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn: BackwardFn) -> "Tensor":
        out = cls(data, dtype=data.dtype)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic is delegated to ops so the graph bookkeeping lives in one place
    def __add__(self, other):
        from .ops import add

        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import add, scale

        return add(self, scale(other, -1.0) if isinstance(other, Tensor) else -other)

    def __neg__(self):
        from .ops import scale

        return scale(self, -1.0)

    def __mul__(self, other):
        from .ops import mul, scale

        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def sum(self) -> "Tensor":
        from .ops import tensor_sum

        return tensor_sum(self)

    def mean(self) -> "Tensor":
        from .ops import scale, tensor_sum

        return scale(tensor_sum(self), 1.0 / self.size)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Back-propagate from a scalar ``loss``.

    Leaf tensors with ``requires_grad`` receive their gradient in ``.grad``
    (overwriting any previous value).  When ``params`` is given, a list of
    gradients aligned with it is returned; parameters the loss does not
    depend on get zeros.
    """
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    params = list(params) if params is not None else None
    if params is not None:
        for p in params:
            p.grad = None

    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topological_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    if params is None:
        return None
    out = []
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        out.append(p.grad)
    return out
