"""Focal loss, smooth-L1 and the per-stage and cascade totals."""
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.assignment.assigner import BACKGROUND, IGNORE, AssignmentResult, StageConfig
from src.losses.detection import LossSettings, focal_loss, smooth_l1, stage_loss, total_loss
from src.numerics.gradcheck import finite_diff_check
from src.numerics.tensor import Tensor
from src.utils.errors import DimensionError, LabelError
from tests.helpers.factories import random_tensor

LOG2 = math.log(2.0)


def _assignment(labels: list[int], targets: np.ndarray | None = None) -> AssignmentResult:
    n = len(labels)
    labels_arr = np.array(labels, dtype=np.int64)
    reg = np.full((n, 4), np.nan) if targets is None else targets
    matched = np.where(labels_arr >= 0, 0, -1)
    return AssignmentResult(labels_arr, matched, reg, np.zeros(n))


def test_focal_loss_single_foreground_logit() -> None:
    loss = focal_loss(Tensor([[0.0]]), [0], alpha_fl=0.25, gamma=2.0)
    assert loss.item() == pytest.approx(0.25 * 0.25 * LOG2)


def test_focal_loss_single_background_logit() -> None:
    loss = focal_loss(Tensor([[0.0]]), [BACKGROUND], alpha_fl=0.25, gamma=2.0)
    assert loss.item() == pytest.approx(0.75 * 0.25 * LOG2)


def test_focal_loss_gamma_zero_without_alpha_is_bce() -> None:
    z = np.array([[1.5, -0.3]])
    loss = focal_loss(Tensor(z), [1], alpha_fl=None, gamma=0.0)
    want = math.log1p(math.exp(1.5)) + math.log1p(math.exp(0.3))
    assert loss.item() == pytest.approx(want)


def test_focal_loss_normalised_by_foreground_count() -> None:
    z = Tensor(np.zeros((4, 1)))
    two_fg = focal_loss(z, [0, 0, BACKGROUND, BACKGROUND]).item()
    per_row_fg, per_row_bg = 0.25 * 0.25 * LOG2, 0.75 * 0.25 * LOG2
    assert two_fg == pytest.approx((2 * per_row_fg + 2 * per_row_bg) / 2)


def test_focal_loss_ignored_rows_have_no_loss_or_grad(rng: np.random.Generator) -> None:
    z = random_tensor(rng, 3, 2, requires_grad=True)
    loss = focal_loss(z, [0, IGNORE, BACKGROUND])
    loss.backward()
    assert_array_equal(z.grad[1], [0.0, 0.0])
    baseline = focal_loss(Tensor(z.data[[0, 2]]), [0, BACKGROUND])
    assert loss.item() == pytest.approx(baseline.item())


def test_focal_loss_finite_for_saturated_logits() -> None:
    z = Tensor([[800.0, -800.0]], requires_grad=True)
    loss = focal_loss(z, [1])
    loss.backward()
    assert np.isfinite(loss.item())
    assert np.all(np.isfinite(z.grad))


def test_focal_loss_label_out_of_range() -> None:
    with pytest.raises(LabelError):
        focal_loss(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(LabelError):
        focal_loss(Tensor(np.zeros((1, 3))), [-3])


def test_focal_loss_label_count_mismatch() -> None:
    with pytest.raises(DimensionError):
        focal_loss(Tensor(np.zeros((2, 3))), [0])


def test_focal_loss_backward_matches_finite_differences(rng: np.random.Generator) -> None:
    labels = [0, 2, BACKGROUND, IGNORE, 1]
    report = finite_diff_check(lambda z: focal_loss(z, labels), [random_tensor(rng, 5, 3)], tolerance=1e-5)
    assert report.passed


def test_smooth_l1_pieces() -> None:
    beta = 1.0 / 9.0
    small = smooth_l1(Tensor([[0.05, 0.0, 0.0, 0.0]]), np.zeros((1, 4)), beta)
    large = smooth_l1(Tensor([[2.0, 0.0, 0.0, 0.0]]), np.zeros((1, 4)), beta)
    assert small.item() == pytest.approx(0.5 * 0.05**2 / beta)
    assert large.item() == pytest.approx(2.0 - 0.5 * beta)


def test_smooth_l1_is_continuous_at_beta() -> None:
    beta = 0.25
    below = smooth_l1(Tensor([[beta - 1e-9, 0.0, 0.0, 0.0]]), np.zeros((1, 4)), beta).item()
    above = smooth_l1(Tensor([[beta + 1e-9, 0.0, 0.0, 0.0]]), np.zeros((1, 4)), beta).item()
    assert below == pytest.approx(above, abs=1e-8)


def test_smooth_l1_beta_zero_is_l1() -> None:
    loss = smooth_l1(Tensor([[1.0, -2.0, 0.5, 0.0]]), np.zeros((1, 4)), beta=0.0)
    assert loss.item() == pytest.approx(3.5)


def test_stage_loss_without_foreground_has_zero_loc() -> None:
    out = stage_loss(Tensor(np.zeros((2, 1))), Tensor(np.ones((2, 4))), _assignment([BACKGROUND, IGNORE]), StageConfig())
    assert out.loc.item() == 0.0
    assert out.combined.item() == pytest.approx(out.cls.item())


def test_stage_loss_weights_loc_by_lambda() -> None:
    targets = np.array([[1.0, 0.0, 0.0, 0.0], [np.nan] * 4])
    a = _assignment([0, BACKGROUND], targets)
    reg = Tensor(np.zeros((2, 4)))
    out = stage_loss(Tensor(np.zeros((2, 1))), reg, a, StageConfig(lambda_=2.0), LossSettings(smooth_l1_beta=0.0))
    # one foreground row, |0 - 1| = 1, normalised by 1
    assert out.loc.item() == pytest.approx(1.0)
    assert out.combined.item() == pytest.approx(out.cls.item() + 2.0)


def test_stage_loss_reg_shape_checked() -> None:
    with pytest.raises(DimensionError):
        stage_loss(Tensor(np.zeros((2, 1))), Tensor(np.zeros((3, 4))), _assignment([0, 0]), StageConfig())


def test_total_loss_weights_stages_by_alpha() -> None:
    z = Tensor(np.zeros((1, 1)), requires_grad=True)
    first = stage_loss(z, Tensor(np.zeros((1, 4))), _assignment([BACKGROUND]), StageConfig(alpha=1.0))
    second = stage_loss(z, Tensor(np.zeros((1, 4))), _assignment([BACKGROUND]), StageConfig(alpha=0.5))
    out = total_loss([first, second], [StageConfig(alpha=1.0), StageConfig(alpha=0.5)])
    assert out.total == pytest.approx(1.5 * first.combined.item())
    assert len(out.per_stage) == 2
    out.objective.backward()
    # d/dz of 1.5 * focal at z = 0 for a background row
    p = 0.5
    single = 0.75 * p**2 * (p - 2.0 * (1 - p) * math.log(1 - p))
    assert z.grad[0, 0] == pytest.approx(1.5 * single)


def test_total_loss_zero_alpha_contributes_nothing() -> None:
    z1 = Tensor(np.zeros((1, 1)), requires_grad=True)
    z2 = Tensor(np.zeros((1, 1)), requires_grad=True)
    a = _assignment([BACKGROUND])
    stages = [stage_loss(z, Tensor(np.zeros((1, 4))), a, StageConfig()) for z in (z1, z2)]
    out = total_loss(stages, [StageConfig(alpha=1.0), StageConfig(alpha=0.0)])
    out.objective.backward()
    assert out.total == pytest.approx(stages[0].combined.item())
    assert_allclose(z2.grad, 0.0)
    assert np.any(z1.grad != 0.0)


def test_total_loss_stage_count_mismatch() -> None:
    loss = stage_loss(Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 4))), _assignment([BACKGROUND]), StageConfig())
    with pytest.raises(DimensionError):
        total_loss([loss], [StageConfig(), StageConfig()])


def test_focal_loss_falls_as_the_true_class_logit_rises() -> None:
    z = np.linspace(-6.0, 6.0, 25)
    fg = [focal_loss(Tensor([[v]]), [0]).item() for v in z]
    bg = [focal_loss(Tensor([[v]]), [BACKGROUND]).item() for v in z]
    assert np.all(np.diff(fg) < 0.0)
    assert np.all(np.diff(bg) > 0.0)


def test_stage_loss_unchanged_when_every_box_is_duplicated(rng: np.random.Generator) -> None:
    labels = [0, BACKGROUND, 1, IGNORE, 0]
    targets = rng.normal(size=(5, 4))
    targets[[1, 3]] = np.nan
    logits = rng.normal(size=(5, 2))
    deltas = rng.normal(size=(5, 4))
    once = stage_loss(Tensor(logits), Tensor(deltas), _assignment(labels, targets), StageConfig())
    twice = stage_loss(
        Tensor(np.concatenate([logits, logits])),
        Tensor(np.concatenate([deltas, deltas])),
        _assignment(labels + labels, np.concatenate([targets, targets])),
        StageConfig(),
    )
    assert twice.cls.item() == pytest.approx(once.cls.item())
    assert twice.loc.item() == pytest.approx(once.loc.item())


def test_smooth_l1_slope_is_continuous_at_beta() -> None:
    beta = 0.25
    slopes = []
    for x in (beta - 1e-7, beta + 1e-7):
        pred = Tensor([[x, 0.0, 0.0, 0.0]], requires_grad=True)
        smooth_l1(pred, np.zeros((1, 4)), beta).backward()
        slopes.append(pred.grad[0, 0])
    assert slopes[0] == pytest.approx(1.0, abs=1e-5)
    assert slopes[1] == pytest.approx(1.0)
