"""Anchor tiling over a feature pyramid."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from src.utils.errors import ConfigError


@dataclass(frozen=True)
class AnchorSpec:
    level_strides: tuple[int, ...]
    # Side lengths at the first level; level l multiplies them by stride_l / stride_0
    scales: tuple[float, ...]
    # h / w
    aspect_ratios: tuple[float, ...]

    @property
    def anchors_per_location(self) -> int:
        return len(self.scales) * len(self.aspect_ratios)


@dataclass(frozen=True)
class AnchorGrid:
    level_strides: tuple[int, ...]
    scales: tuple[float, ...]
    aspect_ratios: tuple[float, ...]
    level_shapes: tuple[tuple[int, int], ...]
    # [N, 4]; level-major, then row, column, shape (scale-major, ratio-minor)
    boxes: np.ndarray

    @property
    def anchors_per_location(self) -> int:
        return len(self.scales) * len(self.aspect_ratios)

    def __len__(self) -> int:
        return int(self.boxes.shape[0])

    def level_counts(self) -> list[int]:
        return [h * w * self.anchors_per_location for h, w in self.level_shapes]


def _cell_shapes(scales: tuple[float, ...], ratios: tuple[float, ...], factor: float) -> np.ndarray:
    """(w, h) per anchor shape with area (scale * factor)^2 for every ratio."""
    shapes = []
    for s in scales:
        side = s * factor
        for r in ratios:
            shapes.append((side / math.sqrt(r), side * math.sqrt(r)))
    return np.array(shapes, dtype=np.float64)


def generate_anchors(image_size: tuple[int, int], spec: AnchorSpec) -> AnchorGrid:
    h, w = image_size
    if not spec.level_strides or not spec.scales or not spec.aspect_ratios:
        raise ConfigError("anchor spec needs at least one stride, scale and aspect ratio")
    for stride in spec.level_strides:
        if stride <= 0 or h % stride or w % stride:
            raise ConfigError(f"anchor stride {stride} does not divide image size {h}x{w}")
    base = spec.level_strides[0]
    levels = []
    level_shapes = []
    for stride in spec.level_strides:
        lh, lw = h // stride, w // stride
        shapes = _cell_shapes(spec.scales, spec.aspect_ratios, stride / base)
        rows, cols = np.meshgrid(np.arange(lh), np.arange(lw), indexing="ij")
        cy = ((rows.reshape(-1) + 0.5) * stride)[:, None]
        cx = ((cols.reshape(-1) + 0.5) * stride)[:, None]
        half_w = 0.5 * shapes[None, :, 0]
        half_h = 0.5 * shapes[None, :, 1]
        level = np.stack([cx - half_w, cy - half_h, cx + half_w, cy + half_h], axis=2)
        levels.append(level.reshape(-1, 4))
        level_shapes.append((lh, lw))
    return AnchorGrid(
        level_strides=tuple(spec.level_strides),
        scales=tuple(spec.scales),
        aspect_ratios=tuple(spec.aspect_ratios),
        level_shapes=tuple(level_shapes),
        boxes=np.concatenate(levels, axis=0),
    )
