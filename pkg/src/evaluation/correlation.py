"""
Confidence vs. localization quality, per cascade stage.

Every pre-NMS prediction (box, class) whose class score reaches the score
threshold is paired with its best IoU against ground truths of that class;
pairs with IoU >= 0.5 are kept. Each stage reports Pearson r between score and
IoU plus the mean score in ten IoU bins over [0.5, 1.0].
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.config.run_config import RunConfig
from src.geometry.anchors import generate_anchors
from src.geometry.boxes import clip_boxes, pairwise_iou
from src.model.cascade import CascadeOutput
from src.model.params import CascadeParams
from src.pipeline.inference import run_cascade
from src.pipeline.synthetic import SyntheticScene
from src.utils.logging import logger

MIN_PAIR_IOU = 0.5
NUM_BINS = 10
LOW_SAMPLE_PAIRS = 30


@dataclass(frozen=True)
class StageCorrelation:
    stage: int
    confidences: np.ndarray
    ious: np.ndarray
    pearson_r: float
    # mean confidence per IoU bin, NaN where a bin is empty
    bin_means: np.ndarray
    low_sample: bool
    zero_variance: bool

    @property
    def num_pairs(self) -> int:
        return int(self.confidences.size)


@dataclass(frozen=True)
class CorrelationReport:
    stages: list[StageCorrelation]

    def stage(self, index: int) -> StageCorrelation:
        for s in self.stages:
            if s.stage == index:
                return s
        raise KeyError(index)


def pearson(x: np.ndarray, y: np.ndarray) -> tuple[float, bool]:
    """(r, zero_variance); r is 0.0 when either side is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        return 0.0, True
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx <= 0.0 or syy <= 0.0:
        return 0.0, True
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0)), False


def bin_means(confidences: np.ndarray, ious: np.ndarray) -> np.ndarray:
    width = (1.0 - MIN_PAIR_IOU) / NUM_BINS
    idx = np.clip(np.floor((ious - MIN_PAIR_IOU) / width).astype(np.int64), 0, NUM_BINS - 1)
    sums = np.bincount(idx, weights=confidences, minlength=NUM_BINS)
    counts = np.bincount(idx, minlength=NUM_BINS)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def summarize_pairs(stage: int, confidences: np.ndarray, ious: np.ndarray) -> StageCorrelation:
    confidences = np.asarray(confidences, dtype=np.float64)
    ious = np.asarray(ious, dtype=np.float64)
    keep = ious >= MIN_PAIR_IOU
    confidences, ious = confidences[keep], ious[keep]
    r, zero_variance = pearson(confidences, ious)
    return StageCorrelation(
        stage=stage,
        confidences=confidences,
        ious=ious,
        pearson_r=r,
        bin_means=bin_means(confidences, ious),
        low_sample=confidences.size < LOW_SAMPLE_PAIRS,
        zero_variance=zero_variance,
    )


def collect_stage_pairs(
    output: CascadeOutput,
    gt_boxes: np.ndarray,
    gt_classes: np.ndarray,
    score_threshold: float,
    image_size: tuple[int, int],
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(scores, ious) of every thresholded prediction, one entry per stage."""
    pairs = []
    for stage in output.stages:
        boxes = clip_boxes(stage.refined_boxes, image_size)
        scores = stage.scores()
        rows, classes = np.nonzero(scores >= score_threshold)
        best = np.zeros(rows.size)
        for c in np.unique(classes):
            gts_c = gt_boxes[gt_classes == c]
            if gts_c.shape[0] == 0:
                continue
            sel = classes == c
            best[sel] = pairwise_iou(boxes[rows[sel]], gts_c).max(axis=1)
        pairs.append((scores[rows, classes], best))
    return pairs


def correlation_report(
    params: CascadeParams,
    scenes: Sequence[SyntheticScene],
    cfg: RunConfig,
    stage_index: int | None = None,
    workers: int = 1,
) -> CorrelationReport:
    anchors = generate_anchors(cfg.image_size, cfg.anchor_spec())

    def scene_pairs(scene: SyntheticScene) -> list[tuple[np.ndarray, np.ndarray]]:
        output = run_cascade(scene.image, params, cfg, anchors)
        return collect_stage_pairs(output, scene.gt_boxes, scene.gt_classes, cfg.score_threshold, cfg.image_size)

    if workers <= 1:
        per_scene = [scene_pairs(s) for s in scenes]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_scene = list(pool.map(scene_pairs, scenes))

    stages = range(1, cfg.num_stages + 1) if stage_index is None else [stage_index]
    results = []
    for s in stages:
        conf = np.concatenate([p[s - 1][0] for p in per_scene]) if per_scene else np.zeros(0)
        ious = np.concatenate([p[s - 1][1] for p in per_scene]) if per_scene else np.zeros(0)
        summary = summarize_pairs(s, conf, ious)
        logger.info(
            "correlation: stage=%d pairs=%d pearson_r=%.4f low_sample=%s",
            s,
            summary.num_pairs,
            summary.pearson_r,
            summary.low_sample,
        )
        results.append(summary)
    return CorrelationReport(stages=results)
