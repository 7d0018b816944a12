"""
Finite-difference suite over every differentiable operation of the detector.

Each case builds a random instance (seeded), reduces the op output to a scalar
with fixed random weights where needed, and runs finite_diff_check. Instances
keep inputs away from non-differentiable points: relu inputs away from 0 and
bilinear sample coordinates away from integers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.assignment.assigner import StageConfig
from src.config.run_config import RunConfig, build_run_config
from src.geometry.anchors import generate_anchors
from src.losses.detection import focal_loss, smooth_l1
from src.model.cascade import cascade_forward
from src.model.layers import backbone_forward, fcm_forward, fcm_sample_points
from src.model.params import ArchSpec, ConvParams, FCMParams, init_params
from src.numerics import ops
from src.numerics.gradcheck import GradCheckReport, finite_diff_check
from src.numerics.tensor import Tensor
from src.pipeline.trainer import assign_stages, cascade_objective
from src.pipeline.synthetic import SyntheticScene
from src.utils.errors import VerificationFailure
from src.utils.logging import logger

TOLERANCE = 1e-4
INSTANCES = 20
# minimum distance of a bilinear sample coordinate from the nearest integer
KINK_MARGIN = 1e-3

Case = tuple[Callable[..., Tensor], list[Tensor]]


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.reduce_sum(ops.mul(out, Tensor(weights)))


def _away_from_integers(points: np.ndarray) -> bool:
    frac = points - np.floor(points)
    return bool(np.all((frac > KINK_MARGIN) & (frac < 1.0 - KINK_MARGIN)))


def _doubled_grad(out: Tensor) -> Tensor:
    """Identity whose backward is off by a factor of 2."""
    return Tensor.from_op(out.data.copy(), (out,), lambda g: (2.0 * g,), "faulty_identity")


def conv2d_case(rng: np.random.Generator) -> Case:
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    x = Tensor(rng.normal(size=(2, 5, 6)))
    kernel = Tensor(rng.normal(size=(3, 2, 3, 3)))
    bias = Tensor(rng.normal(size=3))
    h_out = (5 + 2 * padding - 3) // stride + 1
    w_out = (6 + 2 * padding - 3) // stride + 1
    weights = rng.normal(size=(3, h_out, w_out))
    return (lambda x, k, b: _weighted_sum(ops.conv2d(x, k, b, stride=stride, padding=padding), weights)), [x, kernel, bias]


def sigmoid_case(rng: np.random.Generator) -> Case:
    x = Tensor(rng.uniform(-4.0, 4.0, size=(4, 5)))
    weights = rng.normal(size=(4, 5))
    return (lambda x: _weighted_sum(ops.sigmoid(x), weights)), [x]


def relu_case(rng: np.random.Generator) -> Case:
    magnitude = rng.uniform(0.01, 2.0, size=(4, 5))
    x = Tensor(np.where(rng.random((4, 5)) < 0.5, -magnitude, magnitude))
    weights = rng.normal(size=(4, 5))
    return (lambda x: _weighted_sum(ops.relu(x), weights)), [x]


def bilinear_sample_case(rng: np.random.Generator) -> Case:
    h, w, p = 4, 5, 6
    x = Tensor(rng.normal(size=(2, h, w)))
    whole = np.stack([rng.integers(-1, h + 1, size=p), rng.integers(-1, w + 1, size=p)], axis=1)
    points = Tensor(whole + rng.uniform(0.05, 0.95, size=(p, 2)))
    weights = rng.normal(size=(2, p))
    return (lambda x, pts: _weighted_sum(ops.bilinear_sample(x, pts), weights)), [x, points]


def fcm_forward_case(rng: np.random.Generator) -> Case:
    c, h, w = 2, 4, 4
    while True:
        x = Tensor(rng.normal(size=(c, h, w)))
        p = FCMParams(
            offset_conv=ConvParams(Tensor(rng.normal(0.0, 0.3, size=(18, c, 1, 1))), Tensor(rng.normal(0.0, 0.3, size=18))),
            deform=ConvParams(Tensor(rng.normal(0.0, 0.5, size=(c, c, 3, 3))), Tensor(rng.normal(size=c))),
        )
        if _away_from_integers(fcm_sample_points(x, p)):
            break
    weights = rng.normal(size=(c, h, w))

    def op(x, off_w, off_b, def_w, def_b):
        return _weighted_sum(fcm_forward(x, p), weights)

    return op, [x, p.offset_conv.weight, p.offset_conv.bias, p.deform.weight, p.deform.bias]


def focal_loss_case(rng: np.random.Generator) -> Case:
    n, k = 12, 3
    logits = Tensor(rng.uniform(-3.0, 3.0, size=(n, k)))
    labels = rng.integers(-2, k, size=n)
    labels[int(rng.integers(0, n))] = int(rng.integers(0, k))
    alpha = float(rng.uniform(0.1, 0.9))
    gamma = float(rng.choice([0.0, 1.0, 2.0]))
    return (lambda z: focal_loss(z, labels, alpha, gamma)), [logits]


def smooth_l1_case(rng: np.random.Generator) -> Case:
    pred = Tensor(rng.normal(size=(6, 4)))
    target = pred.data + rng.normal(0.0, 0.3, size=(6, 4))
    beta = float(rng.uniform(0.05, 0.5))
    return (lambda p: smooth_l1(p, target, beta)), [pred]


def _gradcheck_config(seed: int) -> RunConfig:
    return build_run_config(
        {
            "seed": seed,
            "num_stages": 2,
            "stages": [StageConfig(t_fg=0.5, t_bg=0.4), StageConfig(t_fg=0.6, t_bg=0.5)],
            "image_height": 16,
            "image_width": 16,
            "num_classes": 2,
            "channels": 2,
            "head_depth": 0,
            "anchor.strides": (8,),
            "anchor.scales": (12.0,),
            "anchor.ratios": (1.0,),
            "min_size": 8.0,
            "max_size": 12.0,
        }
    )


def cascade_loss_case(rng: np.random.Generator) -> Case:
    """
    Full two-stage objective of a tiny detector as a function of its head and FCM
    weights. Assignments are computed once and held fixed, so the refined boxes
    enter only as constants.
    """
    cfg = _gradcheck_config(int(rng.integers(0, 2**31)))
    anchors = generate_anchors(cfg.image_size, cfg.anchor_spec())
    image = rng.uniform(0.0, 1.0, size=(3, 16, 16))
    # gts close to the anchors so both stages have foreground boxes
    gt_boxes = anchors.boxes + rng.uniform(-0.5, 0.5, size=anchors.boxes.shape)
    gt_classes = rng.integers(0, cfg.num_classes, size=len(anchors))
    scene = SyntheticScene(image=image, gt_boxes=gt_boxes, gt_classes=gt_classes, seed=0)

    while True:
        params = init_params(ArchSpec.from_config(cfg), int(rng.integers(0, 2**31)))
        fcm = params.fcms[1]
        fcm.offset_conv.weight.data[...] = rng.normal(0.0, 0.3, size=fcm.offset_conv.weight.shape)
        fcm.offset_conv.bias.data[...] = rng.normal(0.0, 0.3, size=fcm.offset_conv.bias.shape)
        for head in params.heads:
            head.cls_out.weight.data[...] = rng.normal(0.0, 0.3, size=head.cls_out.weight.shape)
        features = backbone_forward(scene.tensor(), params)[cfg.anchor_strides[0]]
        if _away_from_integers(fcm_sample_points(features, fcm)):
            break
    assignments = assign_stages(cascade_forward(scene.tensor(), params, anchors), scene, cfg)

    inputs = [
        params.heads[0].cls_out.weight,
        params.heads[0].reg_out.weight,
        fcm.offset_conv.weight,
        fcm.deform.weight,
        params.heads[1].cls_out.weight,
        params.heads[1].reg_out.bias,
    ]

    def op(*_):
        out = cascade_forward(scene.tensor(), params, anchors)
        return cascade_objective(out, assignments, cfg).objective

    return op, inputs


CASES: dict[str, Callable[[np.random.Generator], Case]] = {
    "conv2d": conv2d_case,
    "sigmoid": sigmoid_case,
    "relu": relu_case,
    "bilinear_sample": bilinear_sample_case,
    "fcm_forward": fcm_forward_case,
    "focal_loss": focal_loss_case,
    "smooth_l1": smooth_l1_case,
    "cascade_loss": cascade_loss_case,
}


@dataclass(frozen=True)
class SuiteResult:
    reports: list[GradCheckReport]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def failed(self) -> list[str]:
        return [r.op_name for r in self.reports if not r.passed]


def check_op(name: str, seed: int = 0, instances: int = INSTANCES, inject_fault: bool = False) -> GradCheckReport:
    """Worst relative error of `name` over `instances` random instances."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, sorted(CASES).index(name)]))
    worst = 0.0
    for _ in range(instances):
        op, inputs = CASES[name](rng)
        if inject_fault:
            op = (lambda f: lambda *xs: _doubled_grad(f(*xs)))(op)
        worst = max(worst, finite_diff_check(op, inputs, TOLERANCE, op_name=name).max_rel_error)
    report = GradCheckReport(op_name=name, max_rel_error=worst, tolerance=TOLERANCE)
    logger.info("gradcheck: op=%s max_rel_error=%.3e passed=%s", name, worst, report.passed)
    return report


def run_gradcheck(seed: int = 0, instances: int = INSTANCES, inject_fault: str | None = None) -> SuiteResult:
    if inject_fault is not None and inject_fault not in CASES:
        raise KeyError(f"unknown op {inject_fault!r}; choose from {', '.join(CASES)}")
    reports = [check_op(name, seed, instances, inject_fault=(name == inject_fault)) for name in CASES]
    return SuiteResult(reports=reports)


def format_reports(result: SuiteResult) -> str:
    width = max(len(name) for name in CASES)
    lines = [f"{'op'.ljust(width)}  max_rel_error  tolerance  status"]
    for r in result.reports:
        lines.append(f"{r.op_name.ljust(width)}  {r.max_rel_error:13.3e}  {r.tolerance:9.0e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"


def require_pass(result: SuiteResult) -> None:
    if not result.passed:
        raise VerificationFailure(f"gradient check failed for: {', '.join(result.failed())}")
