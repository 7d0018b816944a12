"""
Slow, loop-based reference implementations used to cross-check the vectorised
code. They share no helpers with the modules they check beyond the box tuple
layout (x1, y1, x2, y2).
"""
from __future__ import annotations

import math
from typing import Sequence

Box4 = Sequence[float]


def iou_scalar(a: Box4, b: Box4) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(0.0, iw) * max(0.0, ih)
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def brute_force_nms(boxes: Sequence[Box4], scores: Sequence[float], iou_threshold: float) -> list[int]:
    remaining = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    keep: list[int] = []
    for i in remaining:
        if all(iou_scalar(boxes[i], boxes[k]) <= iou_threshold for k in keep):
            keep.append(i)
    return keep


def brute_force_assign(
    boxes: Sequence[Box4],
    gt_boxes: Sequence[Box4],
    gt_classes: Sequence[int],
    t_fg: float,
    t_bg: float,
) -> list[tuple[int, int]]:
    """(label, matched gt) per box; label -2 ignore, -1 background."""
    out = []
    for box in boxes:
        best, best_j = -1.0, -1
        for j, gt in enumerate(gt_boxes):
            v = iou_scalar(box, gt)
            if v > best:
                best, best_j = v, j
        if best_j >= 0 and best >= t_fg:
            out.append((int(gt_classes[best_j]), best_j))
        elif best_j >= 0 and best >= t_bg:
            out.append((-2, -1))
        else:
            out.append((-1, -1))
    return out


def encode_scalar(anchor: Box4, target: Box4) -> tuple[float, float, float, float]:
    aw, ah = anchor[2] - anchor[0], anchor[3] - anchor[1]
    tw, th = target[2] - target[0], target[3] - target[1]
    return (
        ((target[0] + 0.5 * tw) - (anchor[0] + 0.5 * aw)) / aw,
        ((target[1] + 0.5 * th) - (anchor[1] + 0.5 * ah)) / ah,
        math.log(tw / aw),
        math.log(th / ah),
    )


def average_precision(
    dets: Sequence[Sequence[tuple[Box4, int, float]]],
    gts: Sequence[Sequence[tuple[Box4, int]]],
    iou_threshold: float,
) -> float:
    """101-point interpolated AP averaged over classes with ground truth."""
    classes = sorted({c for image in gts for _, c in image})
    if not classes:
        return 0.0
    total = 0.0
    for c in classes:
        ranked = []
        for img, image_dets in enumerate(dets):
            for row, (box, cls, score) in enumerate(image_dets):
                if cls == c:
                    ranked.append((-score, img, row, box))
        ranked.sort(key=lambda r: (r[0], r[1], r[2]))
        num_gts = sum(1 for image in gts for _, gc in image if gc == c)
        used = {img: [False] * len(image) for img, image in enumerate(gts)}
        tp_flags = []
        for _, img, _, box in ranked:
            best, best_j = -1.0, -1
            for j, (gt, gc) in enumerate(gts[img]):
                if gc != c or used[img][j]:
                    continue
                v = iou_scalar(box, gt)
                if v > best:
                    best, best_j = v, j
            if best_j >= 0 and best >= iou_threshold:
                used[img][best_j] = True
                tp_flags.append(True)
            else:
                tp_flags.append(False)
        precisions, recalls = [], []
        tp = fp = 0
        for flag in tp_flags:
            tp += flag
            fp += not flag
            precisions.append(tp / (tp + fp))
            recalls.append(tp / num_gts)
        ap = 0.0
        for k in range(101):
            r = k / 100.0
            candidates = [p for p, rc in zip(precisions, recalls) if rc >= r]
            ap += max(candidates) if candidates else 0.0
        total += ap / 101.0
    return total / len(classes)
