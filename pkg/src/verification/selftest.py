"""
Property checks for CI: vectorised geometry, assignment and AP code against
loop-based oracles, plus the zero-offset FCM degeneracy.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.assignment.assigner import StageConfig, assign_arrays
from src.evaluation.ap import ap_at_iou
from src.geometry.boxes import Box, Detection, decode_boxes, encode_boxes
from src.geometry.nms import nms_indices
from src.model.layers import conv, fcm_forward
from src.model.params import ConvParams, FCMParams
from src.numerics.tensor import Tensor, no_grad
from src.utils.errors import VerificationFailure
from src.utils.logging import logger
from src.verification import oracles


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_boxes(rng: np.random.Generator, n: int, extent: float = 64.0, min_side: float = 2.0) -> np.ndarray:
    x1 = rng.uniform(0.0, extent - min_side, size=n)
    y1 = rng.uniform(0.0, extent - min_side, size=n)
    w = rng.uniform(min_side, extent / 2, size=n)
    h = rng.uniform(min_side, extent / 2, size=n)
    return np.stack([x1, y1, x1 + w, y1 + h], axis=1)


def check_nms(rng: np.random.Generator, trials: int = 500) -> CheckResult:
    for t in range(trials):
        n = int(rng.integers(0, 21))
        boxes = random_boxes(rng, n, extent=32.0)
        # coarse scores so that ties occur
        scores = np.round(rng.random(n), 1)
        thr = float(rng.choice([0.3, 0.5, 0.7]))
        got = nms_indices(boxes, scores, thr)
        want = oracles.brute_force_nms(boxes.tolist(), scores.tolist(), thr)
        if got != want:
            return CheckResult("nms_oracle", False, f"trial {t}: kept {got}, oracle kept {want}")
    return CheckResult("nms_oracle", True, f"{trials} random sets")


def check_assignment(rng: np.random.Generator, trials: int = 500) -> CheckResult:
    for t in range(trials):
        boxes = random_boxes(rng, int(rng.integers(1, 40)), extent=48.0)
        gts = random_boxes(rng, int(rng.integers(0, 5)), extent=48.0)
        classes = rng.integers(0, 3, size=len(gts))
        t_fg = float(rng.choice([0.5, 0.6, 0.7]))
        cfg = StageConfig(t_fg=t_fg, t_bg=round(t_fg - 0.1, 10))
        result = assign_arrays(boxes, gts, classes, cfg)
        want = oracles.brute_force_assign(boxes.tolist(), gts.tolist(), classes.tolist(), cfg.t_fg, cfg.t_bg)
        got = [(int(l), int(m)) for l, m in zip(result.labels, result.matched_gt)]
        if got != want:
            return CheckResult("assignment_oracle", False, f"trial {t}: labels differ from oracle")
    return CheckResult("assignment_oracle", True, f"{trials} random scenes")


def check_box_round_trip(rng: np.random.Generator, pairs: int = 10_000) -> CheckResult:
    anchors = random_boxes(rng, pairs)
    targets = random_boxes(rng, pairs)
    deltas = encode_boxes(anchors, targets)
    back = decode_boxes(anchors, deltas)
    err = float(np.max(np.abs(back - targets)))
    oracle = np.array([oracles.encode_scalar(a, b) for a, b in zip(anchors[:100].tolist(), targets[:100].tolist())])
    enc_err = float(np.max(np.abs(oracle - deltas[:100])))
    ok = err <= 1e-9 and enc_err <= 1e-12
    return CheckResult("box_round_trip", ok, f"decode err {err:.2e}, encode vs oracle {enc_err:.2e}")


def check_sequential_decode(rng: np.random.Generator, trials: int = 200) -> CheckResult:
    for t in range(trials):
        b0 = random_boxes(rng, 1)
        d1 = rng.normal(0.0, 0.2, size=(1, 4))
        d2 = rng.normal(0.0, 0.2, size=(1, 4))
        b2 = decode_boxes(decode_boxes(b0, d1), d2)
        # hand composition of the two center/size updates
        w0, h0 = b0[0, 2] - b0[0, 0], b0[0, 3] - b0[0, 1]
        cx0, cy0 = b0[0, 0] + 0.5 * w0, b0[0, 1] + 0.5 * h0
        w1, h1 = w0 * np.exp(d1[0, 2]), h0 * np.exp(d1[0, 3])
        cx1, cy1 = cx0 + d1[0, 0] * w0, cy0 + d1[0, 1] * h0
        w2, h2 = w1 * np.exp(d2[0, 2]), h1 * np.exp(d2[0, 3])
        cx2, cy2 = cx1 + d2[0, 0] * w1, cy1 + d2[0, 1] * h1
        hand = np.array([cx2 - 0.5 * w2, cy2 - 0.5 * h2, cx2 + 0.5 * w2, cy2 + 0.5 * h2])
        if np.max(np.abs(b2[0] - hand)) > 1e-9:
            return CheckResult("sequential_decode", False, f"trial {t}: {b2[0]} vs {hand}")
    return CheckResult("sequential_decode", True, f"{trials} two-stage compositions")


def check_zero_offset_fcm(rng: np.random.Generator, trials: int = 50) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        c = int(rng.integers(1, 4))
        h, w = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        x = Tensor(rng.normal(size=(c, h, w)))
        deform = ConvParams(Tensor(rng.normal(size=(c, c, 3, 3))), Tensor(rng.normal(size=c)))
        p = FCMParams(offset_conv=ConvParams(Tensor(np.zeros((18, c, 1, 1))), Tensor(np.zeros(18))), deform=deform)
        with no_grad():
            worst = max(worst, float(np.max(np.abs(fcm_forward(x, p).data - conv(x, deform).data))))
    return CheckResult("zero_offset_fcm", worst <= 1e-12, f"max abs diff {worst:.2e} over {trials} instances")


def _hand_ap_instances() -> list[tuple[str, float, float]]:
    """(label, got, expected) for small hand-computed cases."""
    gt = Box(0.0, 0.0, 10.0, 10.0)
    tp = Detection(Box(0.0, 0.0, 10.0, 8.0), 0, 0.9)
    fp = Detection(Box(50.0, 50.0, 60.0, 60.0), 0, 0.8)
    cases = [
        ("perfect", ap_at_iou([[Detection(gt, 0, 1.0)]], [[(gt, 0)]], 0.5), 1.0),
        ("no_detections", ap_at_iou([[]], [[(gt, 0)]], 0.5), 0.0),
        ("tp_then_fp", ap_at_iou([[tp, fp]], [[(gt, 0)]], 0.5), 1.0),
        # FP ranked first: precision 0.5 at full recall
        ("fp_then_tp", ap_at_iou([[Detection(fp.box, 0, 0.95), tp]], [[(gt, 0)]], 0.5), 0.5),
    ]
    return cases


def check_ap(rng: np.random.Generator, trials: int = 200) -> CheckResult:
    for label, got, expected in _hand_ap_instances():
        if abs(got - expected) > 1e-9:
            return CheckResult("ap_oracle", False, f"{label}: {got} != {expected}")
    for t in range(trials):
        images = int(rng.integers(1, 3))
        dets, gts, raw_dets, raw_gts = [], [], [], []
        for _ in range(images):
            g = random_boxes(rng, int(rng.integers(0, 4)), extent=24.0, min_side=4.0)
            gc = rng.integers(0, 2, size=len(g))
            jitter = g[rng.integers(0, len(g), size=int(rng.integers(0, 6)))] if len(g) else np.zeros((0, 4))
            d = jitter + rng.normal(0.0, 1.5, size=jitter.shape)
            d[:, 2:] = np.maximum(d[:, 2:], d[:, :2] + 0.5)
            dc = rng.integers(0, 2, size=len(d))
            ds = np.round(rng.random(len(d)), 2)
            gts.append([(Box.from_array(b), int(c)) for b, c in zip(g, gc)])
            dets.append([Detection(Box.from_array(b), int(c), float(s)) for b, c, s in zip(d, dc, ds)])
            raw_gts.append([(b.tolist(), int(c)) for b, c in zip(g, gc)])
            raw_dets.append([(b.tolist(), int(c), float(s)) for b, c, s in zip(d, dc, ds)])
        thr = float(rng.choice([0.5, 0.75]))
        got = ap_at_iou(dets, gts, thr)
        want = oracles.average_precision(raw_dets, raw_gts, thr)
        if abs(got - want) > 1e-9:
            return CheckResult("ap_oracle", False, f"trial {t}: {got} vs oracle {want}")
    return CheckResult("ap_oracle", True, f"hand cases and {trials} random instances")


CHECKS: dict[str, Callable[[np.random.Generator], CheckResult]] = {
    "nms_oracle": check_nms,
    "assignment_oracle": check_assignment,
    "box_round_trip": check_box_round_trip,
    "sequential_decode": check_sequential_decode,
    "zero_offset_fcm": check_zero_offset_fcm,
    "ap_oracle": check_ap,
}


def run_selftest(seed: int = 0) -> list[CheckResult]:
    results = []
    for i, (name, check) in enumerate(CHECKS.items()):
        result = check(np.random.default_rng(np.random.SeedSequence([seed, i])))
        logger.info("selftest: check=%s passed=%s %s", name, result.passed, result.detail)
        results.append(result)
    return results


def format_results(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    return "".join(f"{r.name.ljust(width)}  {'ok' if r.passed else 'FAIL'}  {r.detail}\n" for r in results)


def require_pass(results: list[CheckResult]) -> None:
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise VerificationFailure(f"selftest failed: {', '.join(failed)}")
