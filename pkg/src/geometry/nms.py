"""Greedy non-maximum suppression."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from src.geometry.boxes import Detection, pairwise_iou, to_array


def nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> list[int]:
    """
    Indices kept by greedy NMS, in kept order.

    Descending score, ties broken by smaller index; a box is dropped when its IoU
    with an already kept box is strictly above the threshold.
    """
    boxes = to_array(boxes)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    keep: list[int] = []
    while order.size > 0:
        i = int(order[0])
        keep.append(i)
        if order.size == 1:
            break
        overlaps = pairwise_iou(boxes[i : i + 1], boxes[order[1:]])[0]
        order = order[1:][overlaps <= iou_threshold]
    return keep


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """NMS over one class; the caller groups detections by class_id."""
    if not dets:
        return []
    boxes = to_array([d.box for d in dets])
    keep = nms_indices(boxes, np.array([d.score for d in dets]), iou_threshold)
    return [dets[i] for i in keep]


def batched_nms(
    boxes: np.ndarray,
    scores: np.ndarray,
    class_ids: np.ndarray,
    iou_threshold: float,
) -> np.ndarray:
    """Per-class NMS; returns kept indices sorted by (score desc, index asc)."""
    kept: list[int] = []
    for c in np.unique(class_ids):
        idx = np.flatnonzero(class_ids == c)
        kept.extend(int(idx[k]) for k in nms_indices(boxes[idx], scores[idx], iou_threshold))
    kept_arr = np.array(sorted(kept), dtype=np.int64)
    if kept_arr.size == 0:
        return kept_arr
    return kept_arr[np.lexsort((kept_arr, -scores[kept_arr]))]
