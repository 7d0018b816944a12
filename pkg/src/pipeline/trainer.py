"""
Training loop for the cascade detector.

Per image: forward, per-stage assignment on each stage's input boxes, the
weighted multi-stage objective, backward. A batch's objective is the mean of
its images' objectives; gradients of all images are accumulated before one SGD
step. All randomness (init, data, shuffling, flips) is seeded from cfg.seed, and
the math runs on one thread, so a run is reproducible bit for bit.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from src.assignment.assigner import AssignmentResult, assign_arrays
from src.config.run_config import RunConfig, dump_run_config
from src.evaluation.ap import APReport, coco_ap
from src.evaluation.reports import metrics_csv_bytes, metrics_row
from src.geometry.anchors import AnchorGrid, generate_anchors
from src.losses.detection import LossBreakdown, stage_loss, total_loss
from src.model.cascade import CascadeOutput, cascade_forward
from src.model.params import ArchSpec, CascadeParams, init_params
from src.numerics import ops
from src.numerics.optim import clip_grad_norm, sgd_step
from src.pipeline.inference import infer_output, run_cascade
from src.pipeline.synthetic import SyntheticScene, hflip_scene, make_split
from src.storage import checkpoint, files
from src.utils.errors import DivergenceError
from src.utils.logging import logger

CHECKPOINT_FILE = "checkpoint.json"
METRICS_FILE = "metrics.csv"
RESOLVED_CONFIG_FILE = "config.resolved"

# SeedSequence tag for the per-epoch shuffle/flip stream
_EPOCH_STREAM = 7


def assign_stages(output: CascadeOutput, scene: SyntheticScene, cfg: RunConfig) -> list[AssignmentResult]:
    """Stage i is assigned on its own input boxes b^{i-1} with its own thresholds."""
    return [
        assign_arrays(stage.input_boxes, scene.gt_boxes, scene.gt_classes, stage_cfg)
        for stage, stage_cfg in zip(output.stages, cfg.stages)
    ]


def cascade_objective(
    output: CascadeOutput,
    assignments: Sequence[AssignmentResult],
    cfg: RunConfig,
) -> LossBreakdown:
    settings = cfg.loss_settings()
    losses = [
        stage_loss(stage.cls_logits, stage.reg_deltas, assignment, stage_cfg, settings)
        for stage, assignment, stage_cfg in zip(output.stages, assignments, cfg.stages)
    ]
    return total_loss(losses, cfg.stages[: len(losses)])


@dataclass
class EpochMetrics:
    epoch: int
    # (cls, loc) mean over images, one per stage
    per_stage: list[tuple[float, float]]
    total: float
    val_ap: float


@dataclass
class TrainResult:
    params: CascadeParams
    history: list[EpochMetrics] = field(default_factory=list)


def evaluate_ap(
    params: CascadeParams,
    scenes: Sequence[SyntheticScene],
    cfg: RunConfig,
    workers: int = 1,
    test_stage: int | None = None,
) -> APReport:
    """APReport of `params` on `scenes`."""
    anchors = generate_anchors(cfg.image_size, cfg.anchor_spec())

    def detect(scene: SyntheticScene):
        return infer_output(run_cascade(scene.image, params, cfg, anchors), cfg, cfg.image_size, test_stage)

    if workers <= 1:
        dets = [detect(s) for s in scenes]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            dets = list(pool.map(detect, scenes))
    return coco_ap(dets, [s.gts for s in scenes])


class Trainer:
    def __init__(self, cfg: RunConfig, params: CascadeParams | None = None, workers: int = 1):
        self.cfg = cfg
        self.workers = workers
        self.arch = ArchSpec.from_config(cfg)
        self.params = params if params is not None else init_params(self.arch, cfg.seed)
        self.anchors: AnchorGrid = generate_anchors(cfg.image_size, cfg.anchor_spec())
        self.named = self.params.named_parameters()
        self._clip_to = cfg.image_size if cfg.clip_refined_boxes else None

    def forward(self, scene: SyntheticScene) -> CascadeOutput:
        return cascade_forward(scene.tensor(), self.params, self.anchors, self.cfg.num_stages, clip_to=self._clip_to)

    def image_loss(self, scene: SyntheticScene) -> LossBreakdown:
        output = self.forward(scene)
        return cascade_objective(output, assign_stages(output, scene, self.cfg), self.cfg)

    def _check_losses(self, breakdown: LossBreakdown, scene: SyntheticScene) -> None:
        for s, (cls, loc) in enumerate(breakdown.per_stage, start=1):
            for label, value in (("cls_loss", cls), ("loc_loss", loc)):
                if not math.isfinite(value):
                    raise DivergenceError(f"stage{s}.{label}", f"{value} on scene seed {scene.seed}")

    def _check_tensors(self, kind: str) -> None:
        for name, t in self.named.items():
            arr = t.data if kind == "param" else t.grad
            if arr is not None and not np.all(np.isfinite(arr)):
                raise DivergenceError(name if kind == "param" else f"{name}.grad", f"non-finite {kind}")

    def train_step(self, batch: Sequence[SyntheticScene]) -> LossBreakdown:
        """One SGD step on the mean objective of `batch`; returns the mean breakdown."""
        for t in self.named.values():
            t.zero_grad()
        scale = 1.0 / len(batch)
        per_stage = np.zeros((self.cfg.num_stages, 2))
        total = 0.0
        for scene in batch:
            breakdown = self.image_loss(scene)
            self._check_losses(breakdown, scene)
            ops.mul(breakdown.objective, scale).backward()
            per_stage += np.array(breakdown.per_stage)
            total += breakdown.total
        self._check_tensors("grad")
        if self.cfg.grad_clip_norm > 0:
            clip_grad_norm(list(self.named.values()), self.cfg.grad_clip_norm)
        sgd_step(self.named, self.cfg.lr, self.cfg.momentum)
        self._check_tensors("param")
        return LossBreakdown(
            per_stage=tuple((float(c), float(l)) for c, l in per_stage * scale),
            total=total * scale,
        )

    def epoch_batches(self, scenes: Sequence[SyntheticScene], epoch: int) -> list[list[SyntheticScene]]:
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, _EPOCH_STREAM, epoch]))
        order = rng.permutation(len(scenes))
        flips = rng.random(len(scenes)) < 0.5
        picked = [hflip_scene(scenes[i]) if self.cfg.hflip and flip else scenes[i] for i, flip in zip(order, flips)]
        size = self.cfg.batch_size
        return [picked[k : k + size] for k in range(0, len(picked), size)]

    def run(self, train_scenes: Sequence[SyntheticScene], val_scenes: Sequence[SyntheticScene]) -> TrainResult:
        result = TrainResult(params=self.params)
        for epoch in range(1, self.cfg.epochs + 1):
            sums = np.zeros((self.cfg.num_stages, 2))
            total = 0.0
            for batch in self.epoch_batches(train_scenes, epoch):
                step = self.train_step(batch)
                sums += np.array(step.per_stage) * len(batch)
                total += step.total * len(batch)
            n = max(1, len(train_scenes))
            val_ap = evaluate_ap(self.params, val_scenes, self.cfg, self.workers).ap if val_scenes else 0.0
            metrics = EpochMetrics(
                epoch=epoch,
                per_stage=[(float(c), float(l)) for c, l in sums / n],
                total=total / n,
                val_ap=val_ap,
            )
            result.history.append(metrics)
            logger.info("train: epoch=%d total=%.5f val_ap=%.4f", epoch, metrics.total, val_ap)
        return result


def metrics_rows(history: Sequence[EpochMetrics]) -> list[list[str]]:
    rows = []
    for m in history:
        for s, (cls, loc) in enumerate(m.per_stage, start=1):
            rows.append(metrics_row(m.epoch, str(s), cls, loc, m.total, m.val_ap))
    return rows


def checkpoint_meta(cfg: RunConfig, arch: ArchSpec) -> dict[str, str]:
    return {**arch.meta(), "seed": str(cfg.seed)}


def train(cfg: RunConfig, out_dir: str | Path, workers: int = 1) -> TrainResult:
    """Train from scratch on the synthetic task; writes checkpoint, metrics and resolved config to out_dir."""
    out_dir = Path(out_dir)
    logger.info(
        "train: stages=%d use_fcm=%s epochs=%d train_scenes=%d seed=%d",
        cfg.num_stages,
        cfg.use_fcm,
        cfg.epochs,
        cfg.train_scenes,
        cfg.seed,
    )
    train_scenes = make_split(cfg, "train", cfg.train_scenes, workers)
    val_scenes = make_split(cfg, "val", cfg.val_scenes, workers)
    trainer = Trainer(cfg, workers=workers)
    result = trainer.run(train_scenes, val_scenes)

    out_dir.mkdir(parents=True, exist_ok=True)
    files.write_text(out_dir / RESOLVED_CONFIG_FILE, dump_run_config(cfg))
    files.write_bytes(out_dir / METRICS_FILE, metrics_csv_bytes(metrics_rows(result.history)))
    path = checkpoint.save(out_dir / CHECKPOINT_FILE, trainer.named, checkpoint_meta(cfg, trainer.arch))
    logger.info("train: checkpoint=%s params=%d", path, trainer.params.num_parameters())
    return result
