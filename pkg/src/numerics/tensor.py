"""
Dense float64 tensor with reverse-mode differentiation.

Each differentiable op records its parents and a backward closure that maps the
output gradient to one gradient per parent. `Tensor.backward()` walks the graph
in reverse topological order and sums the contributions, so ops never need to
know how many consumers their output has.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from src.utils.errors import DimensionError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_grad_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Build no graph inside the block (per thread)."""
    previous = grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
    ):
        self.data: np.ndarray = np.ascontiguousarray(np.array(data, dtype=np.float64))
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: BackwardFn,
        op: str,
    ) -> "Tensor":
        out = cls(data)
        out.op = op
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError("item", "size", 1, self.shape)
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _topological_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if self.size != 1:
            raise DimensionError("backward", "output size", 1, self.shape)
        if not self.requires_grad:
            return
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.asarray(pg, dtype=np.float64)

    def __add__(self, other):
        from src.numerics import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from src.numerics import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from src.numerics import ops

        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from src.numerics import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from src.numerics import ops

        return ops.neg(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"
