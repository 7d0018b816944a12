"""
Axis-aligned boxes, IoU and the (dx, dy, dw, dh) box-delta transform.

Box arrays are float64 [N, 4] in (x1, y1, x2, y2) image pixel coordinates.
The scalar `Box` API wraps the array functions so both agree bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.utils.errors import GeometryError

# Upper clamp on dw/dh before exp()
BBOX_XFORM_CLIP = math.log(1000.0 / 16)


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    @classmethod
    def from_array(cls, row: Sequence[float]) -> "Box":
        return cls(float(row[0]), float(row[1]), float(row[2]), float(row[3]))


@dataclass(frozen=True)
class Detection:
    box: Box
    class_id: int
    score: float
    # Cascade stage whose boxes produced this detection
    stage: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise GeometryError(f"detection score must be in [0, 1], got {self.score}")


def to_array(boxes: Sequence[Box] | np.ndarray) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return boxes.astype(np.float64, copy=False).reshape(-1, 4)
    if not boxes:
        return np.zeros((0, 4))
    return np.stack([b.as_array() for b in boxes])


def to_boxes(arr: np.ndarray) -> list[Box]:
    return [Box.from_array(row) for row in np.asarray(arr).reshape(-1, 4)]


def box_areas(boxes: np.ndarray) -> np.ndarray:
    return np.clip(boxes[:, 2] - boxes[:, 0], 0.0, None) * np.clip(boxes[:, 3] - boxes[:, 1], 0.0, None)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix [N, M]; pairs whose union is 0 get 0."""
    a = to_array(a)
    b = to_array(b)
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0.0, None) * np.clip(iy2 - iy1, 0.0, None)
    union = box_areas(a)[:, None] + box_areas(b)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def iou(a: Box, b: Box) -> float:
    return float(pairwise_iou(a.as_array()[None], b.as_array()[None])[0, 0])


def _centers_sizes(boxes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    return boxes[:, 0] + 0.5 * w, boxes[:, 1] + 0.5 * h, w, h


def encode_boxes(anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Deltas [N, 4] taking each anchor onto its target."""
    anchors = to_array(anchors)
    targets = to_array(targets)
    acx, acy, aw, ah = _centers_sizes(anchors)
    tcx, tcy, tw, th = _centers_sizes(targets)
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise GeometryError("encode_deltas: anchor has zero or negative area")
    if np.any(tw <= 0) or np.any(th <= 0):
        raise GeometryError("encode_deltas: target has zero or negative area")
    return np.stack(
        [(tcx - acx) / aw, (tcy - acy) / ah, np.log(tw / aw), np.log(th / ah)],
        axis=1,
    )


def clip_boxes(boxes: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    h, w = image_size
    out = boxes.copy()
    out[:, 0::2] = np.clip(out[:, 0::2], 0.0, float(w))
    out[:, 1::2] = np.clip(out[:, 1::2], 0.0, float(h))
    return out


def decode_boxes(
    anchors: np.ndarray,
    deltas: np.ndarray,
    clip_to: tuple[int, int] | None = None,
) -> np.ndarray:
    """Inverse of encode_boxes; dw/dh clamped at BBOX_XFORM_CLIP, optional clip to (H, W)."""
    anchors = to_array(anchors)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    acx, acy, aw, ah = _centers_sizes(anchors)
    dw = np.minimum(deltas[:, 2], BBOX_XFORM_CLIP)
    dh = np.minimum(deltas[:, 3], BBOX_XFORM_CLIP)
    cx = deltas[:, 0] * aw + acx
    cy = deltas[:, 1] * ah + acy
    w = aw * np.exp(dw)
    h = ah * np.exp(dh)
    out = np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)
    if clip_to is not None:
        out = clip_boxes(out, clip_to)
    return out


def encode_deltas(anchor: Box, target: Box) -> tuple[float, float, float, float]:
    d = encode_boxes(anchor.as_array()[None], target.as_array()[None])[0]
    return (float(d[0]), float(d[1]), float(d[2]), float(d[3]))


def decode_deltas(
    anchor: Box,
    deltas: Sequence[float],
    clip_to: tuple[int, int] | None = None,
) -> Box:
    return Box.from_array(decode_boxes(anchor.as_array()[None], np.asarray(deltas)[None], clip_to)[0])
