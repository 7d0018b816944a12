"""
Cascade inference: sequential box refinement, stage-score ensemble, per-class NMS.

Boxes always come from the last stage that runs (or from `test_stage` when one
is picked). Scores are the equal-weight mean of the per-stage sigmoid scores in
"average" mode, or the last stage's scores in "last" mode.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from src.config.run_config import RunConfig
from src.geometry.anchors import AnchorGrid, generate_anchors
from src.geometry.boxes import Box, Detection, clip_boxes
from src.geometry.nms import batched_nms
from src.model.cascade import CascadeOutput, cascade_forward
from src.model.params import CascadeParams
from src.numerics.tensor import Tensor, no_grad
from src.utils.errors import ConfigError, DimensionError


def combine_scores(stage_scores: Sequence[np.ndarray], mode: str = "average") -> np.ndarray:
    if not stage_scores:
        raise DimensionError("combine_scores", "stages", ">= 1", 0)
    if mode == "last":
        return stage_scores[-1]
    if mode != "average":
        raise ConfigError(f"unknown ensemble mode {mode!r}")
    return np.mean(np.stack(stage_scores), axis=0)


def candidate_arrays(
    output: CascadeOutput,
    cfg: RunConfig,
    image_size: tuple[int, int],
    test_stage: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Final boxes [N, 4] and scores [N, K] before thresholding."""
    if test_stage is None:
        boxes = output.stages[-1].refined_boxes
        scores = combine_scores([s.scores() for s in output.stages], cfg.ensemble_mode)
    else:
        if not 1 <= test_stage <= output.num_stages:
            raise DimensionError("infer", "test_stage", f"1..{output.num_stages}", test_stage)
        stage = output.stages[test_stage - 1]
        boxes, scores = stage.refined_boxes, stage.scores()
    return clip_boxes(boxes, image_size), scores


def infer_output(
    output: CascadeOutput,
    cfg: RunConfig,
    image_size: tuple[int, int],
    test_stage: int | None = None,
) -> list[Detection]:
    boxes, scores = candidate_arrays(output, cfg, image_size, test_stage)
    rows, classes = np.nonzero(scores > cfg.score_threshold)
    if rows.size == 0:
        return []
    cand_boxes = boxes[rows]
    cand_scores = scores[rows, classes]
    keep = batched_nms(cand_boxes, cand_scores, classes, cfg.nms_threshold)[: cfg.top_k]
    stage = output.num_stages if test_stage is None else test_stage
    return [
        Detection(
            box=Box.from_array(cand_boxes[k]),
            class_id=int(classes[k]),
            score=float(np.clip(cand_scores[k], 0.0, 1.0)),
            stage=stage,
        )
        for k in keep
    ]


def run_cascade(
    image: Tensor | np.ndarray,
    params: CascadeParams,
    cfg: RunConfig,
    anchors: AnchorGrid | None = None,
) -> CascadeOutput:
    tensor = image if isinstance(image, Tensor) else Tensor(image)
    grid = anchors if anchors is not None else generate_anchors(cfg.image_size, cfg.anchor_spec())
    clip_to = cfg.image_size if cfg.clip_refined_boxes else None
    with no_grad():
        return cascade_forward(tensor, params, grid, cfg.num_stages, clip_to=clip_to)


def infer(
    image: Tensor | np.ndarray,
    params: CascadeParams,
    cfg: RunConfig,
    anchors: AnchorGrid | None = None,
    test_stage: int | None = None,
) -> list[Detection]:
    output = run_cascade(image, params, cfg, anchors)
    return infer_output(output, cfg, cfg.image_size, test_stage)
