"""
Differentiable operations over `Tensor`.

Only what the detector needs: elementwise arithmetic on equal shapes, a few
reductions and reshapes, 2-D convolution and bilinear sampling. Broadcasting
is limited to a Python scalar on the right-hand side.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.numerics.tensor import Tensor
from src.utils.errors import DimensionError


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(op, "shape", a.shape, b.shape)


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return Tensor.from_op(a.data + c, (a,), lambda g: (g,), "add_scalar")
    _check_same_shape("add", a, b)
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _check_same_shape("sub", a, b)
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return Tensor.from_op(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")
    _check_same_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return Tensor.from_op(a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data), "mul")


def reduce_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor.from_op(
        np.array(a.data.sum()),
        (a,),
        lambda g: (np.full(shape, float(g)),),
        "sum",
    )


def mean(a: Tensor) -> Tensor:
    return mul(reduce_sum(a), 1.0 / max(1, a.size))


def add_all(terms: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors as one node."""
    if not terms:
        raise DimensionError("add_all", "terms", ">= 1", 0)
    for t in terms[1:]:
        _check_same_shape("add_all", terms[0], t)
    total = np.sum([t.data for t in terms], axis=0)
    return Tensor.from_op(total, tuple(terms), lambda g: tuple(g for _ in terms), "add_all")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    original = a.shape
    if int(np.prod(shape)) != a.size:
        raise DimensionError("reshape", "size", a.size, int(np.prod(shape)))
    return Tensor.from_op(
        a.data.reshape(shape),
        (a,),
        lambda g: (g.reshape(original),),
        "reshape",
    )


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (g.transpose(inverse),),
        "transpose",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul", "rank", 2, (a.data.ndim, b.data.ndim))
    if a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", "inner", a.shape[1], b.shape[0])
    a_data, b_data = a.data, b.data
    return Tensor.from_op(
        a_data @ b_data,
        (a, b),
        lambda g: (g @ b_data.T, a_data.T @ g),
        "matmul",
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def take_rows(a: Tensor, index) -> Tensor:
    """Rows of `a` at `index` (repeats allowed)."""
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return Tensor.from_op(a.data[index], (a,), backward, "take_rows")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return Tensor.from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = stable_sigmoid(a.data)
    return Tensor.from_op(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlation of x[C_in,H,W] with kernel[C_out,C_in,kH,kW]."""
    if x.data.ndim != 3:
        raise DimensionError("conv2d", "input rank", 3, x.data.ndim)
    if kernel.data.ndim != 4:
        raise DimensionError("conv2d", "kernel rank", 4, kernel.data.ndim)
    if stride < 1:
        raise DimensionError("conv2d", "stride", ">= 1", stride)
    c_in, h, w = x.shape
    c_out, k_in, kh, kw = kernel.shape
    if k_in != c_in:
        raise DimensionError("conv2d", "C_in", c_in, k_in)
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp:
        raise DimensionError("conv2d", "H", f">= {kh} after padding", hp)
    if kw > wp:
        raise DimensionError("conv2d", "W", f">= {kw} after padding", wp)
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError("conv2d", "C_out", (c_out,), bias.shape)

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    h_out, w_out = windows.shape[1], windows.shape[2]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c_in * kh * kw, h_out * w_out)
    weights = kernel.data.reshape(c_out, -1)
    out = (weights @ cols).reshape(c_out, h_out, w_out)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def backward(g):
        g2 = g.reshape(c_out, -1)
        g_kernel = (g2 @ cols.T).reshape(kernel.shape)
        g_cols = (weights.T @ g2).reshape(c_in, kh, kw, h_out, w_out)
        g_xp = np.zeros_like(xp)
        y_end = stride * (h_out - 1) + 1
        x_end = stride * (w_out - 1) + 1
        for i in range(kh):
            for j in range(kw):
                g_xp[:, i : i + y_end : stride, j : j + x_end : stride] += g_cols[:, i, j]
        g_x = g_xp[:, padding : padding + h, padding : padding + w]
        if bias is None:
            return (g_x, g_kernel)
        return (g_x, g_kernel, g.sum(axis=(1, 2)))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor.from_op(out, parents, backward, "conv2d")


def bilinear_sample(x: Tensor, points) -> Tensor:
    """
    Sample x[C,H,W] at fractional (y, x) points; returns [C, P].

    Reads outside [0,H-1]x[0,W-1] see zeros, so the result fades linearly to 0
    within one cell of the border. Differentiable w.r.t. x and the points.
    """
    if x.data.ndim != 3:
        raise DimensionError("bilinear_sample", "input rank", 3, x.data.ndim)
    pts = points if isinstance(points, Tensor) else Tensor(np.asarray(points, dtype=np.float64).reshape(-1, 2))
    if pts.data.ndim != 2 or pts.shape[1] != 2:
        raise DimensionError("bilinear_sample", "points", "(P, 2)", pts.shape)
    data = x.data
    _, h, w = data.shape
    py, px = pts.data[:, 0], pts.data[:, 1]
    y0, x0 = np.floor(py), np.floor(px)
    wy1, wx1 = py - y0, px - x0
    wy0, wx0 = 1.0 - wy1, 1.0 - wx1

    corners = []
    for yy, xx in ((y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)):
        valid = (yy >= 0) & (yy <= h - 1) & (xx >= 0) & (xx <= w - 1)
        yi = np.clip(yy, 0, h - 1).astype(np.int64)
        xi = np.clip(xx, 0, w - 1).astype(np.int64)
        corners.append((yi, xi, valid, data[:, yi, xi] * valid))
    (_, _, _, v00), (_, _, _, v01), (_, _, _, v10), (_, _, _, v11) = corners
    weights = (wy0 * wx0, wy0 * wx1, wy1 * wx0, wy1 * wx1)
    out = weights[0] * v00 + weights[1] * v01 + weights[2] * v10 + weights[3] * v11

    def backward(g):
        g_x = np.zeros_like(data)
        for (yi, xi, valid, _), wk in zip(corners, weights):
            np.add.at(g_x, (slice(None), yi, xi), g * (wk * valid))
        g_y = (g * (wx0 * (v10 - v00) + wx1 * (v11 - v01))).sum(axis=0)
        g_xcoord = (g * (wy0 * (v01 - v00) + wy1 * (v11 - v10))).sum(axis=0)
        return (g_x, np.stack([g_y, g_xcoord], axis=1))

    return Tensor.from_op(out, (x, pts), backward, "bilinear_sample")


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x[C, ...] + bias[C] broadcast over the trailing axes."""
    if bias.data.ndim != 1 or bias.shape[0] != x.shape[0]:
        raise DimensionError("add_channel_bias", "C", (x.shape[0],), bias.shape)
    expand = (slice(None),) + (None,) * (x.data.ndim - 1)
    axes = tuple(range(1, x.data.ndim))
    return Tensor.from_op(
        x.data + bias.data[expand],
        (x, bias),
        lambda g: (g, g.sum(axis=axes)),
        "add_channel_bias",
    )
