"""Backbone, detection head and the Feature Consistency Module (FCM)."""
from __future__ import annotations

import numpy as np

from src.model.params import CascadeParams, ConvParams, FCMParams, HeadParams
from src.numerics import ops
from src.numerics.tensor import Tensor, no_grad
from src.utils.errors import DimensionError


def conv(x: Tensor, p: ConvParams, stride: int = 1) -> Tensor:
    k = p.weight.shape[2]
    return ops.conv2d(x, p.weight, p.bias, stride=stride, padding=(k - 1) // 2)


def backbone_forward(image: Tensor, params: CascadeParams) -> dict[int, Tensor]:
    """Stride-2 conv + relu blocks; returns feature maps keyed by total stride."""
    if image.data.ndim != 3 or image.shape[0] != params.arch.in_channels:
        raise DimensionError("backbone", "channels", params.arch.in_channels, image.shape)
    features: dict[int, Tensor] = {}
    x = image
    stride = 1
    for block in params.backbone:
        x = ops.relu(conv(x, block, stride=2))
        stride *= 2
        features[stride] = x
    return {s: features[s] for s in params.arch.level_strides}


def _bin_grid(kh: int, kw: int, h: int, w: int) -> np.ndarray:
    """Unshifted (y, x) sample points [kh*kw*h*w, 2], ordered (bin, row, col)."""
    ky, kx = np.meshgrid(np.arange(kh) - (kh - 1) // 2, np.arange(kw) - (kw - 1) // 2, indexing="ij")
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    py = ky.reshape(-1, 1, 1) + ys[None]
    px = kx.reshape(-1, 1, 1) + xs[None]
    return np.stack([py.reshape(-1), px.reshape(-1)], axis=1).astype(np.float64)


def _sample_points(x: Tensor, p: FCMParams) -> Tensor:
    """Shifted (y, x) sample points [kh*kw*H*W, 2], ordered (bin, row, col)."""
    _, h, w = x.shape
    _, _, kh, kw = p.deform.weight.shape
    bins = kh * kw
    offsets = conv(x, p.offset_conv)
    if offsets.shape[0] != 2 * bins:
        raise DimensionError("fcm", "offset channels", 2 * bins, offsets.shape[0])
    shifts = ops.reshape(ops.transpose(ops.reshape(offsets, (bins, 2, h, w)), (0, 2, 3, 1)), (bins * h * w, 2))
    return ops.add(shifts, Tensor(_bin_grid(kh, kw, h, w)))


def fcm_sample_points(x: Tensor, p: FCMParams) -> np.ndarray:
    with no_grad():
        return _sample_points(x, p).data


def fcm_forward(x: Tensor, p: FCMParams) -> Tensor:
    """
    Deformable conv whose per-location bin offsets come from a 1x1 conv on x.

    Offset channel 2k is the y shift and 2k+1 the x shift of bin k (row-major
    over the kernel). With zero offsets this is exactly a same-padded conv.
    """
    if x.data.ndim != 3:
        raise DimensionError("fcm", "input rank", 3, x.data.ndim)
    c, h, w = x.shape
    c_out, c_in, kh, kw = p.deform.weight.shape
    if c_in != c:
        raise DimensionError("fcm", "C_in", c, c_in)
    sampled = ops.bilinear_sample(x, _sample_points(x, p))
    cols = ops.reshape(sampled, (c * kh * kw, h * w))
    out = ops.matmul(ops.reshape(p.deform.weight, (c_out, c * kh * kw)), cols)
    out = ops.reshape(out, (c_out, h, w))
    if p.deform.bias is not None:
        out = ops.add_channel_bias(out, p.deform.bias)
    return out


def head_forward(x: Tensor, h: HeadParams, num_classes: int) -> tuple[Tensor, Tensor]:
    """
    Tower then two output convs, flattened to the anchor order.

    Row ((r*W + c)*A + a) holds anchor a at cell (r, c); classes along columns.
    """
    t = x
    for block in h.tower:
        t = ops.relu(conv(t, block))
    cls = conv(t, h.cls_out)
    reg = conv(t, h.reg_out)
    _, height, width = cls.shape
    a = cls.shape[0] // num_classes
    if a * num_classes != cls.shape[0] or reg.shape[0] != 4 * a:
        raise DimensionError("head", "output channels", (a * num_classes, 4 * a), (cls.shape[0], reg.shape[0]))
    cls = ops.reshape(ops.transpose(cls, (1, 2, 0)), (height * width * a, num_classes))
    reg = ops.reshape(ops.transpose(reg, (1, 2, 0)), (height * width * a, 4))
    return cls, reg
