"""
Detection losses.

Focal loss and smooth-L1 are single fused nodes with closed-form gradients so
saturated logits stay finite. Both are normalised by the number of foreground
boxes, floored at 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from src.assignment.assigner import IGNORE, AssignmentResult, StageConfig
from src.numerics import ops
from src.numerics.tensor import Tensor
from src.utils.errors import DimensionError, LabelError


@dataclass(frozen=True)
class LossSettings:
    focal_alpha: float | None = 0.25
    focal_gamma: float = 2.0
    smooth_l1_beta: float = 1.0 / 9.0


class StageLoss(NamedTuple):
    cls: Tensor
    loc: Tensor
    combined: Tensor


@dataclass(frozen=True)
class LossBreakdown:
    per_stage: tuple[tuple[float, float], ...]
    total: float
    # Differentiable total; absent once the breakdown is only a log record
    objective: Tensor | None = field(default=None, compare=False, repr=False)


def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def _focal_elementwise(
    z: np.ndarray,
    targets: np.ndarray,
    alpha: float | None,
    gamma: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-element focal loss and its derivative w.r.t. the logit."""
    p = ops.stable_sigmoid(z)
    log_p = _log_sigmoid(z)
    log_q = _log_sigmoid(-z)
    q = 1.0 - p
    w_pos = 1.0 if alpha is None else alpha
    w_neg = 1.0 if alpha is None else 1.0 - alpha
    pos_mod = q**gamma
    neg_mod = p**gamma
    loss = np.where(targets > 0, -w_pos * pos_mod * log_p, -w_neg * neg_mod * log_q)
    grad = np.where(
        targets > 0,
        w_pos * pos_mod * (gamma * p * log_p - q),
        w_neg * neg_mod * (p - gamma * q * log_q),
    )
    return loss, grad


def focal_loss(
    pred_logits: Tensor,
    labels: Sequence[int] | np.ndarray,
    alpha_fl: float | None = 0.25,
    gamma: float = 2.0,
    normalizer: float | None = None,
) -> Tensor:
    """
    Sigmoid focal loss over logits [N, K].

    Labels follow the assignment convention: class id, BACKGROUND (-1) for an
    all-zero target row, IGNORE (-2) to drop the row. alpha_fl=None disables
    class weighting.
    """
    if pred_logits.data.ndim != 2:
        raise DimensionError("focal_loss", "logits rank", 2, pred_logits.data.ndim)
    n, num_classes = pred_logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise DimensionError("focal_loss", "N", n, labels.shape[0])
    if np.any(labels >= num_classes):
        raise LabelError(f"focal_loss: label {int(labels.max())} out of range for {num_classes} classes")
    if np.any(labels < IGNORE):
        raise LabelError(f"focal_loss: unknown label {int(labels.min())}")

    fg = labels >= 0
    keep = (labels != IGNORE).astype(np.float64)[:, None]
    targets = np.zeros((n, num_classes))
    targets[np.flatnonzero(fg), labels[fg]] = 1.0
    norm = float(normalizer) if normalizer is not None else float(max(1, int(fg.sum())))

    loss, grad = _focal_elementwise(pred_logits.data, targets, alpha_fl, gamma)
    value = float((loss * keep).sum()) / norm
    local_grad = grad * keep / norm
    return Tensor.from_op(np.array(value), (pred_logits,), lambda g: (float(g) * local_grad,), "focal_loss")


def smooth_l1(
    pred: Tensor,
    target: np.ndarray,
    beta: float = 1.0 / 9.0,
    normalizer: float | None = None,
) -> Tensor:
    """Sum of 0.5*x^2/beta for |x| < beta, |x| - 0.5*beta otherwise, over [N, 4] rows."""
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred.data - target
    absd = np.abs(diff)
    if beta <= 0:
        loss, grad = absd, np.sign(diff)
    else:
        quadratic = absd < beta
        loss = np.where(quadratic, 0.5 * diff * diff / beta, absd - 0.5 * beta)
        grad = np.where(quadratic, diff / beta, np.sign(diff))
    norm = float(normalizer) if normalizer is not None else float(max(1, pred.shape[0]))
    local_grad = grad / norm
    return Tensor.from_op(np.array(loss.sum() / norm), (pred,), lambda g: (float(g) * local_grad,), "smooth_l1")


def stage_loss(
    cls_logits: Tensor,
    reg_preds: Tensor,
    assignment: AssignmentResult,
    cfg: StageConfig,
    settings: LossSettings = LossSettings(),
) -> StageLoss:
    """cls + λ·loc, the localization term only over foreground boxes."""
    if reg_preds.shape != (cls_logits.shape[0], 4):
        raise DimensionError("stage_loss", "reg_preds", (cls_logits.shape[0], 4), reg_preds.shape)
    cls = focal_loss(cls_logits, assignment.labels, settings.focal_alpha, settings.focal_gamma)
    fg = np.flatnonzero(assignment.foreground)
    if fg.size:
        loc = smooth_l1(
            ops.take_rows(reg_preds, fg),
            assignment.reg_targets[fg],
            settings.smooth_l1_beta,
            normalizer=max(1, fg.size),
        )
    else:
        loc = Tensor(0.0)
    return StageLoss(cls=cls, loc=loc, combined=cls + loc * cfg.lambda_)


def total_loss(stage_losses: Sequence[StageLoss], stage_cfgs: Sequence[StageConfig]) -> LossBreakdown:
    """Σ αᵢ·(clsᵢ + λᵢ·locᵢ)."""
    if len(stage_losses) != len(stage_cfgs):
        raise DimensionError("total_loss", "stages", len(stage_cfgs), len(stage_losses))
    if not stage_losses:
        raise DimensionError("total_loss", "stages", ">= 1", 0)
    weighted = []
    per_stage = []
    for sl, cfg in zip(stage_losses, stage_cfgs):
        cls, loc, combined = (ops.as_tensor(v) for v in sl)
        per_stage.append((cls.item(), loc.item()))
        weighted.append(ops.reshape(combined * cfg.alpha, ()))
    objective = ops.add_all(weighted)
    return LossBreakdown(per_stage=tuple(per_stage), total=objective.item(), objective=objective)
