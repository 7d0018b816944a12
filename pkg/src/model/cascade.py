"""
Cascade forward pass.

Stage 1 runs its head on the backbone features x1 and refines the anchors b0
into b1. Each later stage first adapts the previous features with its FCM
(x_{i+1} = FCM(x_i)), or reuses x1 unchanged when the FCM is off, then refines
b_{i-1} into b_i. Refined boxes are constants: no gradient flows through them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.config.run_config import MAX_STAGES
from src.geometry.anchors import AnchorGrid
from src.geometry.boxes import decode_boxes
from src.model.layers import backbone_forward, fcm_forward, head_forward
from src.model.params import CascadeParams
from src.numerics import ops
from src.numerics.tensor import Tensor
from src.utils.errors import DimensionError


@dataclass
class StageOutput:
    # [N, num_classes], rows in anchor order
    cls_logits: Tensor
    # [N, 4] deltas relative to this stage's input boxes
    reg_deltas: Tensor
    # input boxes b_{i-1} [N, 4]
    input_boxes: np.ndarray
    # refined boxes b_i [N, 4]
    refined_boxes: np.ndarray

    def scores(self) -> np.ndarray:
        return ops.stable_sigmoid(self.cls_logits.data)


@dataclass
class CascadeOutput:
    stages: list[StageOutput]
    anchors: np.ndarray

    @property
    def num_stages(self) -> int:
        return len(self.stages)


def cascade_forward(
    image: Tensor,
    params: CascadeParams,
    anchors: AnchorGrid,
    num_stages: int | None = None,
    clip_to: tuple[int, int] | None = None,
) -> CascadeOutput:
    n = params.arch.num_stages if num_stages is None else num_stages
    if not 1 <= n <= min(MAX_STAGES, len(params.heads)):
        raise DimensionError("cascade", "num_stages", f"1..{min(MAX_STAGES, len(params.heads))}", n)
    features = backbone_forward(image, params)
    levels = [features[s] for s in anchors.level_strides]
    for feat, (lh, lw) in zip(levels, anchors.level_shapes):
        if feat.shape[1:] != (lh, lw):
            raise DimensionError("cascade", "feature map", (lh, lw), feat.shape[1:])

    num_classes = params.arch.num_classes
    boxes = anchors.boxes
    stages: list[StageOutput] = []
    for i in range(n):
        fcm = params.fcms[i] if i < len(params.fcms) else None
        if i > 0 and fcm is not None:
            levels = [fcm_forward(x, fcm) for x in levels]
        cls_parts, reg_parts = [], []
        for x in levels:
            cls, reg = head_forward(x, params.heads[i], num_classes)
            cls_parts.append(cls)
            reg_parts.append(reg)
        cls_logits = ops.concat(cls_parts, axis=0)
        reg_deltas = ops.concat(reg_parts, axis=0)
        refined = decode_boxes(boxes, reg_deltas.data, clip_to)
        stages.append(StageOutput(cls_logits, reg_deltas, boxes, refined))
        boxes = refined
    return CascadeOutput(stages=stages, anchors=anchors.boxes)
