"""SGD with momentum and global-norm gradient clipping."""
from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

from src.numerics.tensor import Tensor
from src.utils.errors import MissingGradientError


def _named(params: Mapping[str, Tensor] | Sequence[Tensor]) -> list[tuple[str, Tensor]]:
    if isinstance(params, Mapping):
        return list(params.items())
    return [(p.name or f"param[{i}]", p) for i, p in enumerate(params)]


def sgd_step(
    params: Mapping[str, Tensor] | Sequence[Tensor],
    lr: float,
    momentum: float = 0.0,
) -> None:
    """
    In-place update: v = momentum * v + grad; w -= lr * v. Grads are zeroed after.

    The velocity buffer lives on the tensor, so the same tensors must be passed on
    every step. Every parameter is checked before any is touched.
    """
    named = _named(params)
    for name, p in named:
        if p.grad is None:
            raise MissingGradientError(name)
    for _, p in named:
        velocity = getattr(p, "velocity", None)
        if velocity is None:
            velocity = np.zeros_like(p.data)
        velocity = momentum * velocity + p.grad
        p.velocity = velocity
        p.data -= lr * velocity
        p.grad[...] = 0.0


def global_grad_norm(params: Iterable[Tensor]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)))


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most max_norm; returns the norm before clipping."""
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm
