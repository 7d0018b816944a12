"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from src.numerics.tensor import Tensor, no_grad
from src.utils.errors import GradCheckError

EPSILON = 1e-6
DENOMINATOR_FLOOR = 1e-8


@dataclass(frozen=True)
class GradCheckReport:
    op_name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise GradCheckError(f"finite_diff_check needs a scalar output, got shape {out.shape}")
    return out.item()


def finite_diff_check(
    op: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    tolerance: float,
    op_name: str = "op",
) -> GradCheckReport:
    """
    Compare the analytic gradient of op(*inputs) with central differences.

    Relative error per element is |a - n| / max(|a|, |n|, 1e-8); the report keeps
    the worst one over all elements of all inputs.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = op(*inputs)
    _scalar(out)
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    worst = 0.0
    with no_grad():
        for t, a in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            a_flat = a.reshape(-1)
            for k in range(flat.size):
                original = flat[k]
                flat[k] = original + EPSILON
                plus_x = flat[k]
                f_plus = _scalar(op(*inputs))
                flat[k] = original - EPSILON
                minus_x = flat[k]
                f_minus = _scalar(op(*inputs))
                flat[k] = original
                numeric = (f_plus - f_minus) / (plus_x - minus_x)
                denom = max(abs(a_flat[k]), abs(numeric), DENOMINATOR_FLOOR)
                err = abs(a_flat[k] - numeric) / denom
                if not math.isfinite(err):
                    err = math.inf
                worst = max(worst, err)
    for t in inputs:
        t.grad = None
    return GradCheckReport(op_name=op_name, max_rel_error=float(worst), tolerance=tolerance)
