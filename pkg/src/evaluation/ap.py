"""
COCO-style average precision.

Per class, detections from all images are ranked by score (stable, so ties
keep image then list order). Each one in turn takes its best-IoU unmatched
same-class gt in its own image if that IoU reaches the threshold (TP), else it
is a FP. Precision is made monotone from the right and read at the 101 recall
points 0, 0.01, ..., 1; AP is their mean, averaged over classes that have gts.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from src.geometry.boxes import Box, Detection, pairwise_iou, to_array
from src.utils.errors import DimensionError

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
REPORTED_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)
RECALL_POINTS = np.arange(101) / 100.0

ImageDetections = Sequence[Detection]
ImageGts = Sequence[tuple[Box, int]]


@dataclass(frozen=True)
class APReport:
    ap: float
    ap_at: dict[float, float]
    per_threshold: tuple[float, ...] = field(default=(), repr=False)

    def row(self) -> tuple[float, ...]:
        return (self.ap,) + tuple(self.ap_at[t] for t in REPORTED_THRESHOLDS)


@dataclass
class _ClassRanking:
    num_gts: int
    # (image, detection row) in rank order
    order: list[tuple[int, int]]
    # per image: IoU [dets_of_class, gts_of_class]
    ious: dict[int, np.ndarray]


def _rank_classes(dets: Sequence[ImageDetections], gts: Sequence[ImageGts]) -> dict[int, _ClassRanking]:
    if len(dets) != len(gts):
        raise DimensionError("coco_ap", "images", len(gts), len(dets))
    classes = sorted({c for image in gts for _, c in image})
    rankings = {}
    for c in classes:
        entries: list[tuple[float, int, int]] = []
        ious: dict[int, np.ndarray] = {}
        num_gts = 0
        for img, (img_dets, img_gts) in enumerate(zip(dets, gts)):
            gt_boxes = [b for b, gc in img_gts if gc == c]
            det_boxes = [d.box for d in img_dets if d.class_id == c]
            scores = [d.score for d in img_dets if d.class_id == c]
            num_gts += len(gt_boxes)
            if det_boxes:
                ious[img] = pairwise_iou(to_array(det_boxes), to_array(gt_boxes))
                entries.extend((s, img, row) for row, s in enumerate(scores))
        ranks = np.argsort([-s for s, _, _ in entries], kind="stable")
        order = [(entries[k][1], entries[k][2]) for k in ranks]
        rankings[c] = _ClassRanking(num_gts=num_gts, order=order, ious=ious)
    return rankings


def _class_ap(ranking: _ClassRanking, iou_threshold: float) -> float:
    matched = {img: np.zeros(m.shape[1], dtype=bool) for img, m in ranking.ious.items()}
    tp = np.zeros(len(ranking.order))
    for k, (img, row) in enumerate(ranking.order):
        m = ranking.ious[img]
        if m.shape[1] == 0:
            continue
        candidates = np.where(matched[img], -1.0, m[row])
        best = int(np.argmax(candidates))
        if candidates[best] >= iou_threshold:
            matched[img][best] = True
            tp[k] = 1.0
    if tp.size == 0:
        return 0.0
    tp_sum = np.cumsum(tp)
    fp_sum = np.cumsum(1.0 - tp)
    recall = tp_sum / ranking.num_gts
    precision = tp_sum / (tp_sum + fp_sum)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    inds = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(inds < precision.size, precision[np.minimum(inds, precision.size - 1)], 0.0)
    return float(q.mean())


def _mean_ap(rankings: dict[int, _ClassRanking], iou_threshold: float) -> float:
    if not rankings:
        return 0.0
    return float(np.mean([_class_ap(r, iou_threshold) for r in rankings.values()]))


def ap_at_iou(dets: Sequence[ImageDetections], gts: Sequence[ImageGts], iou_threshold: float) -> float:
    """AP at one IoU threshold; 0.0 when there are no gts at all."""
    return _mean_ap(_rank_classes(dets, gts), iou_threshold)


def coco_ap(dets: Sequence[ImageDetections], gts: Sequence[ImageGts]) -> APReport:
    rankings = _rank_classes(dets, gts)
    per_threshold = tuple(_mean_ap(rankings, t) for t in IOU_THRESHOLDS)
    by_threshold = dict(zip(IOU_THRESHOLDS, per_threshold))
    return APReport(
        ap=float(np.mean(per_threshold)),
        ap_at={t: by_threshold[t] for t in REPORTED_THRESHOLDS},
        per_threshold=per_threshold,
    )
