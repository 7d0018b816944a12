"""
Synthetic detection scenes: bright disks, squares and triangles on dim noise.

Ground-truth boxes come from the shape geometry, not from the rasterised
pixels, so they are exact. A scene is a pure function of (config, seed).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from src.config.run_config import RunConfig
from src.geometry.boxes import Box, pairwise_iou
from src.numerics.tensor import Tensor

SHAPE_CLASSES = ("disk", "square", "triangle")
MAX_PLACEMENT_TRIES = 100
MAX_PAIRWISE_IOU = 0.3
NOISE_LEVEL = 0.3

SPLIT_CODES = {"train": 1, "val": 2, "analysis": 3}


@dataclass(frozen=True)
class SyntheticScene:
    # [3, H, W] in [0, 1]
    image: np.ndarray
    gt_boxes: np.ndarray
    gt_classes: np.ndarray
    seed: int

    @property
    def gts(self) -> list[tuple[Box, int]]:
        return [(Box.from_array(b), int(c)) for b, c in zip(self.gt_boxes, self.gt_classes)]

    @property
    def image_size(self) -> tuple[int, int]:
        return (int(self.image.shape[1]), int(self.image.shape[2]))

    def tensor(self) -> Tensor:
        return Tensor(self.image)


def scene_seed(master_seed: int, split: str, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, SPLIT_CODES[split], index]).generate_state(1)[0])


def _shape_mask(kind: str, box: np.ndarray, py: np.ndarray, px: np.ndarray) -> np.ndarray:
    x1, y1, x2, y2 = box
    if kind == "disk":
        cx, cy, r = 0.5 * (x1 + x2), 0.5 * (y1 + y2), 0.5 * (x2 - x1)
        return (px - cx) ** 2 + (py - cy) ** 2 <= r * r
    if kind == "square":
        return (px >= x1) & (px <= x2) & (py >= y1) & (py <= y2)
    # isosceles triangle, apex at top centre, base on the bottom edge
    cx = 0.5 * (x1 + x2)
    depth = (py - y1) / (y2 - y1)
    return (py >= y1) & (py <= y2) & (np.abs(px - cx) <= 0.5 * (x2 - x1) * depth)


def gen_scene(cfg: RunConfig, seed: int) -> SyntheticScene:
    h, w = cfg.image_size
    rng = np.random.default_rng(seed)
    image = rng.uniform(0.0, NOISE_LEVEL, size=(3, h, w))
    py, px = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")

    wanted = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
    boxes: list[np.ndarray] = []
    classes: list[int] = []
    tries = 0
    while len(boxes) < wanted and tries < MAX_PLACEMENT_TRIES:
        tries += 1
        cls = int(rng.integers(0, cfg.num_classes))
        kind = SHAPE_CLASSES[cls]
        bw = float(rng.uniform(cfg.min_size, cfg.max_size))
        # squares and disks are square; triangles take their own height
        bh = bw if kind != "triangle" else float(rng.uniform(max(cfg.min_size, bw / 2), min(cfg.max_size, bw * 2)))
        x1 = float(rng.uniform(0.0, w - bw))
        y1 = float(rng.uniform(0.0, h - bh))
        box = np.array([x1, y1, x1 + bw, y1 + bh])
        color = rng.uniform(0.5, 1.0, size=3)
        if boxes and pairwise_iou(box[None], np.stack(boxes)).max() >= MAX_PAIRWISE_IOU:
            continue
        mask = _shape_mask(kind, box, py, px)
        image[:, mask] = color[:, None]
        boxes.append(box)
        classes.append(cls)

    return SyntheticScene(
        image=image,
        gt_boxes=np.stack(boxes) if boxes else np.zeros((0, 4)),
        gt_classes=np.array(classes, dtype=np.int64),
        seed=seed,
    )


def hflip_scene(scene: SyntheticScene) -> SyntheticScene:
    w = scene.image.shape[2]
    boxes = scene.gt_boxes.copy()
    boxes[:, 0] = w - scene.gt_boxes[:, 2]
    boxes[:, 2] = w - scene.gt_boxes[:, 0]
    return SyntheticScene(
        image=np.ascontiguousarray(scene.image[:, :, ::-1]),
        gt_boxes=boxes,
        gt_classes=scene.gt_classes.copy(),
        seed=scene.seed,
    )


def make_split(cfg: RunConfig, split: str, count: int, workers: int = 1) -> list[SyntheticScene]:
    """Scenes 0..count-1 of a split; the order does not depend on `workers`."""
    seeds = [scene_seed(cfg.seed, split, i) for i in range(count)]
    if workers <= 1:
        return [gen_scene(cfg, s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: gen_scene(cfg, s), seeds))
