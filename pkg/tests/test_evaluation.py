"""COCO-style AP, the confidence/IoU correlation and report files."""
import csv
import math
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.evaluation import reports
from src.evaluation.ap import IOU_THRESHOLDS, ap_at_iou, coco_ap
from src.evaluation.correlation import (
    LOW_SAMPLE_PAIRS,
    CorrelationReport,
    bin_means,
    collect_stage_pairs,
    correlation_report,
    pearson,
    summarize_pairs,
)
from src.geometry.boxes import Box, Detection
from src.model.cascade import CascadeOutput, StageOutput
from src.numerics.tensor import Tensor
from src.pipeline.synthetic import make_split
from src.utils.errors import DimensionError
from src.verification import oracles
from tests.helpers.factories import tiny_params

GT = Box(0.0, 0.0, 10.0, 10.0)
FAR = Box(50.0, 50.0, 60.0, 60.0)


def _read_csv(path: Path) -> list[list[str]]:
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_perfect_detections_score_one_everywhere() -> None:
    report = coco_ap([[Detection(GT, 0, 0.9)]], [[(GT, 0)]])
    assert report.ap == 1.0
    assert all(v == 1.0 for v in report.per_threshold)
    assert report.row() == (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


def test_no_detections_score_zero() -> None:
    assert coco_ap([[]], [[(GT, 0)]]).ap == 0.0


def test_no_ground_truth_anywhere_scores_zero() -> None:
    assert coco_ap([[Detection(GT, 0, 0.9)]], [[]]).ap == 0.0


def test_false_positive_ranked_first_halves_ap() -> None:
    dets = [[Detection(FAR, 0, 0.95), Detection(GT, 0, 0.9)]]
    assert ap_at_iou(dets, [[(GT, 0)]], 0.5) == pytest.approx(0.5)


def test_duplicate_below_true_positive_does_not_lower_ap() -> None:
    dets = [[Detection(GT, 0, 0.9), Detection(GT, 0, 0.8)]]
    assert ap_at_iou(dets, [[(GT, 0)]], 0.5) == 1.0


def test_half_recall_reads_51_of_101_points() -> None:
    gts = [[(GT, 0), (FAR, 0)]]
    assert ap_at_iou([[Detection(GT, 0, 0.9)]], gts, 0.5) == pytest.approx(51 / 101)


def test_match_needs_same_class_and_same_image() -> None:
    assert ap_at_iou([[Detection(GT, 1, 0.9)]], [[(GT, 0)]], 0.5) == 0.0
    assert ap_at_iou([[Detection(GT, 0, 0.9)], []], [[], [(GT, 0)]], 0.5) == 0.0


def test_classes_without_gts_are_not_averaged() -> None:
    dets = [[Detection(GT, 0, 0.9), Detection(FAR, 2, 0.99)]]
    assert ap_at_iou(dets, [[(GT, 0)]], 0.5) == 1.0


def test_ap_falls_as_threshold_rises() -> None:
    # IoU 0.8 with the gt
    report = coco_ap([[Detection(Box(0.0, 0.0, 10.0, 8.0), 0, 0.9)]], [[(GT, 0)]])
    assert report.ap_at[0.5] == 1.0
    assert report.ap_at[0.8] == 1.0
    assert report.ap_at[0.9] == 0.0
    assert report.ap == pytest.approx(7 / 10)
    values = [report.per_threshold[i] for i in range(len(IOU_THRESHOLDS))]
    assert values == sorted(values, reverse=True)


def test_ap_matches_loop_oracle(rng: np.random.Generator) -> None:
    for _ in range(30):
        g = rng.uniform(0, 20, size=(3, 2))
        gt_boxes = np.concatenate([g, g + rng.uniform(4, 10, size=(3, 2))], axis=1)
        noisy = gt_boxes[rng.integers(0, 3, size=5)] + rng.normal(0, 1.0, size=(5, 4))
        noisy[:, 2:] = np.maximum(noisy[:, 2:], noisy[:, :2] + 0.5)
        classes = rng.integers(0, 2, size=3)
        det_classes = rng.integers(0, 2, size=5)
        scores = np.round(rng.random(5), 1)
        dets = [[Detection(Box.from_array(b), int(c), float(s)) for b, c, s in zip(noisy, det_classes, scores)]]
        gts = [[(Box.from_array(b), int(c)) for b, c in zip(gt_boxes, classes)]]
        raw_dets = [[(b.tolist(), int(c), float(s)) for b, c, s in zip(noisy, det_classes, scores)]]
        raw_gts = [[(b.tolist(), int(c)) for b, c in zip(gt_boxes, classes)]]
        assert ap_at_iou(dets, gts, 0.5) == pytest.approx(oracles.average_precision(raw_dets, raw_gts, 0.5), abs=1e-12)


def test_uniform_overlap_passes_only_the_lower_thresholds() -> None:
    loose = Box(0.0, 0.0, 10.0, 6.5)  # IoU 0.65 with GT
    dets = [[Detection(loose, c, 0.9 - 0.1 * c)] for c in range(3)]
    gts = [[(GT, c)] for c in range(3)]
    report = coco_ap(dets, gts)
    assert report.ap_at[0.5] == 1.0
    assert report.ap_at[0.6] == 1.0
    assert [report.ap_at[t] for t in (0.7, 0.8, 0.9)] == [0.0, 0.0, 0.0]


def test_image_count_mismatch() -> None:
    with pytest.raises(DimensionError):
        coco_ap([[]], [[], []])


def test_pearson_examples() -> None:
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert pearson(x, 2 * x + 1) == (pytest.approx(1.0), False)
    assert pearson(x, -x) == (pytest.approx(-1.0), False)
    assert pearson(x, np.full(4, 0.7)) == (0.0, True)
    assert pearson(np.array([0.3]), np.array([0.9])) == (0.0, True)


def test_bin_means_edges() -> None:
    means = bin_means(np.array([0.2, 0.4, 0.9, 0.7]), np.array([0.5, 0.52, 1.0, 0.99]))
    assert means[0] == pytest.approx(0.3)
    assert means[9] == pytest.approx(0.8)
    assert np.all(np.isnan(means[1:9]))


def test_summarize_pairs_drops_low_iou_and_flags_small_samples() -> None:
    s = summarize_pairs(1, np.array([0.9, 0.8, 0.1]), np.array([0.9, 0.6, 0.3]))
    assert s.num_pairs == 2
    assert_array_equal(s.ious, [0.9, 0.6])
    assert s.low_sample
    assert s.pearson_r == pytest.approx(1.0)
    many = summarize_pairs(2, np.linspace(0.1, 0.9, LOW_SAMPLE_PAIRS), np.linspace(0.5, 1.0, LOW_SAMPLE_PAIRS))
    assert not many.low_sample


def test_collect_stage_pairs_uses_same_class_gts() -> None:
    boxes = np.array([[0.0, 0.0, 10.0, 8.0], [0.0, 0.0, 10.0, 10.0]])
    scores = np.array([[0.9, 0.01], [0.01, 0.5]])
    stage = StageOutput(Tensor(np.log(scores / (1 - scores))), Tensor(np.zeros((2, 4))), boxes, boxes)
    out = CascadeOutput(stages=[stage], anchors=boxes)
    [(conf, ious)] = collect_stage_pairs(out, np.array([[0.0, 0.0, 10.0, 10.0]]), np.array([0]), 0.05, (32, 32))
    # the class-1 prediction has no class-1 gt, so its IoU is 0
    assert_allclose(conf, [0.9, 0.5])
    assert_allclose(ious, [0.8, 0.0])


def test_correlation_report_covers_every_stage(tiny_config) -> None:
    report = correlation_report(tiny_params(tiny_config), make_split(tiny_config, "analysis", 2), tiny_config)
    assert [s.stage for s in report.stages] == [1, 2]
    assert report.stage(2).stage == 2
    for s in report.stages:
        assert np.all(s.ious >= 0.5)
        assert -1.0 <= s.pearson_r <= 1.0
    with pytest.raises(KeyError):
        report.stage(3)


def test_eval_csv_layout(tmp_path: Path) -> None:
    report = coco_ap([[Detection(GT, 0, 0.9)]], [[(GT, 0)]])
    reports.write_eval_csv(tmp_path / "eval.csv", [("1", report), ("1~2", report)])
    rows = _read_csv(tmp_path / "eval.csv")
    assert rows[0] == ["test_stage", "ap", "ap50", "ap60", "ap70", "ap80", "ap90"]
    assert rows[1] == ["1"] + ["1.0"] * 6
    assert rows[2][0] == "1~2"


def test_ap_table_prints_percent() -> None:
    report = coco_ap([[Detection(GT, 0, 0.95), Detection(FAR, 0, 0.99)]], [[(GT, 0)]])
    table = reports.format_ap_table([("1", report)])
    header, _, row = table.splitlines()
    assert header.split() == ["stage", "AP", "AP50", "AP60", "AP70", "AP80", "AP90"]
    assert row.split()[:2] == ["1", "50.0"]


def test_correlation_csvs(tmp_path: Path) -> None:
    s1 = summarize_pairs(1, np.array([0.9, 0.8]), np.array([0.9, 0.6]))
    s2 = summarize_pairs(2, np.array([]), np.array([]))
    written = reports.write_correlation_csvs(tmp_path, CorrelationReport([s1, s2]))
    assert [p.name for p in written] == ["correlation_stage1.csv", "correlation_stage2.csv", "correlation_summary.csv"]
    assert _read_csv(tmp_path / "correlation_stage1.csv") == [["stage", "confidence", "iou"], ["1", "0.9", "0.9"], ["1", "0.8", "0.6"]]
    summary = _read_csv(tmp_path / "correlation_summary.csv")
    assert summary[2][:5] == ["2", "0", "0.0", "true", "true"]
    # empty bins are blank cells
    assert summary[2][5:] == [""] * 10
    assert "zero_variance" in reports.format_correlation_table(CorrelationReport([s2]))


def test_metrics_row_formats_nan_as_blank() -> None:
    assert reports.metrics_row(1, "2", 0.5, math.nan, 1.0, 0.25) == ["1", "2", "0.5", "", "1.0", "0.25"]
