"""
Per-stage anchor labelling by max IoU.

A box whose best IoU with any ground truth reaches T+ takes that ground truth's
class and regression target; below T- it is background; in between it is
ignored by both losses. Every stage re-runs the matching on its own input boxes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.geometry.boxes import Box, encode_boxes, pairwise_iou, to_array
from src.utils.errors import ConfigError

IGNORE = -2
BACKGROUND = -1


@dataclass(frozen=True)
class StageConfig:
    t_fg: float = 0.5
    t_bg: float = 0.4
    # λ: weight of the localization loss inside the stage loss
    lambda_: float = 2.0
    # α: weight of this stage in the cascade total; 0 switches the stage's loss off
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.t_bg <= self.t_fg <= 1.0:
            raise ConfigError(f"stage thresholds need 0 <= t_bg <= t_fg <= 1, got t_bg={self.t_bg} t_fg={self.t_fg}")
        # IoU 0, e.g. a zero-area box clipped at the border, is never foreground
        if self.t_fg <= 0.0:
            raise ConfigError(f"stage t_fg must be > 0, got {self.t_fg}")
        if self.lambda_ <= 0:
            raise ConfigError(f"stage lambda must be > 0, got {self.lambda_}")
        if self.alpha < 0:
            raise ConfigError(f"stage alpha must be >= 0, got {self.alpha}")


def default_stage_config(stage: int) -> StageConfig:
    """T+ = 0.5, 0.6, 0.7 for stages 1..3; T- = 0.4 for stage 1, T+ - 0.1 afterwards."""
    t_fg = round(0.5 + 0.1 * (stage - 1), 10)
    t_bg = 0.4 if stage == 1 else round(t_fg - 0.1, 10)
    return StageConfig(t_fg=t_fg, t_bg=t_bg)


@dataclass(frozen=True)
class AssignmentResult:
    # IGNORE, BACKGROUND or class id, per box
    labels: np.ndarray
    # index into the ground truths, -1 unless foreground
    matched_gt: np.ndarray
    # [N, 4] deltas; NaN rows unless foreground
    reg_targets: np.ndarray
    # best IoU per box (0 when there are no ground truths)
    max_iou: np.ndarray

    @property
    def foreground(self) -> np.ndarray:
        return self.labels >= 0

    @property
    def num_foreground(self) -> int:
        return int(np.count_nonzero(self.labels >= 0))

    def matched_gt_of(self, k: int) -> int | None:
        return int(self.matched_gt[k]) if self.labels[k] >= 0 else None

    def reg_target_of(self, k: int) -> tuple[float, float, float, float] | None:
        if self.labels[k] < 0:
            return None
        return tuple(float(v) for v in self.reg_targets[k])


def _check_config(cfg: StageConfig) -> None:
    if not isinstance(cfg, StageConfig):
        raise ConfigError(f"expected a StageConfig, got {type(cfg).__name__}")
    cfg.__post_init__()


def assign_arrays(
    boxes: np.ndarray,
    gt_boxes: np.ndarray,
    gt_classes: np.ndarray,
    cfg: StageConfig,
) -> AssignmentResult:
    _check_config(cfg)
    boxes = to_array(boxes)
    n = boxes.shape[0]
    labels = np.full(n, BACKGROUND, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    targets = np.full((n, 4), np.nan)
    gt_boxes = to_array(gt_boxes)
    if gt_boxes.shape[0] == 0:
        return AssignmentResult(labels, matched, targets, np.zeros(n))

    overlaps = pairwise_iou(boxes, gt_boxes)
    best = overlaps.argmax(axis=1)
    best_iou = overlaps[np.arange(n), best]
    fg = best_iou >= cfg.t_fg
    ignore = ~fg & (best_iou >= cfg.t_bg)
    gt_classes = np.asarray(gt_classes, dtype=np.int64)
    labels[fg] = gt_classes[best[fg]]
    labels[ignore] = IGNORE
    matched[fg] = best[fg]
    if np.any(fg):
        targets[fg] = encode_boxes(boxes[fg], gt_boxes[best[fg]])
    return AssignmentResult(labels, matched, targets, best_iou)


def assign(
    boxes: Sequence[Box] | np.ndarray,
    gts: Sequence[tuple[Box, int]],
    cfg: StageConfig,
) -> AssignmentResult:
    gt_boxes = to_array([g for g, _ in gts])
    gt_classes = np.array([c for _, c in gts], dtype=np.int64)
    return assign_arrays(to_array(boxes), gt_boxes, gt_classes, cfg)


def reassign_all_stages(
    stage_boxes: Sequence[Sequence[Box] | np.ndarray],
    gts: Sequence[tuple[Box, int]],
    stage_cfgs: Sequence[StageConfig],
) -> list[AssignmentResult]:
    """One independent assign() per stage, each on that stage's input boxes."""
    if len(stage_boxes) != len(stage_cfgs):
        raise ConfigError(f"got boxes for {len(stage_boxes)} stages but {len(stage_cfgs)} stage configs")
    return [assign(boxes, gts, cfg) for boxes, cfg in zip(stage_boxes, stage_cfgs)]
