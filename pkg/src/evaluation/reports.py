"""Report tables and CSV artifacts for eval, analyze, train and sweep."""
from __future__ import annotations

import math
import os
from pathlib import Path
from typing import Sequence

from src.evaluation.ap import REPORTED_THRESHOLDS, APReport
from src.evaluation.correlation import NUM_BINS, CorrelationReport
from src.storage import files

AP_COLUMNS = ("AP",) + tuple(f"AP{round(t * 100)}" for t in REPORTED_THRESHOLDS)
EVAL_HEADER = ("test_stage", "ap") + tuple(f"ap{round(t * 100)}" for t in REPORTED_THRESHOLDS)
SWEEP_HEADER = ("t_fg",) + EVAL_HEADER[1:]
METRICS_HEADER = ("epoch", "stage", "cls_loss", "loc_loss", "total", "val_ap")
PAIRS_HEADER = ("stage", "confidence", "iou")
CORRELATION_HEADER = ("stage", "pairs", "pearson_r", "low_sample", "zero_variance") + tuple(
    f"bin_{i}" for i in range(NUM_BINS)
)


def _num(value: float) -> str:
    return "" if math.isnan(value) else repr(float(value))


def format_ap_table(rows: Sequence[tuple[str, APReport]]) -> str:
    """Fixed-width table, AP values in percent with one decimal."""
    label_width = max([len("stage")] + [len(label) for label, _ in rows])
    header = "stage".ljust(label_width) + "".join(f"{c:>8}" for c in AP_COLUMNS)
    lines = [header, "-" * len(header)]
    for label, report in rows:
        lines.append(label.ljust(label_width) + "".join(f"{100.0 * v:8.1f}" for v in report.row()))
    return "\n".join(lines) + "\n"


def eval_rows(rows: Sequence[tuple[str, APReport]]) -> list[list[str]]:
    return [[label] + [_num(v) for v in report.row()] for label, report in rows]


def write_eval_csv(path: str | os.PathLike, rows: Sequence[tuple[str, APReport]]) -> Path:
    return files.write_csv(path, EVAL_HEADER, eval_rows(rows))


def write_sweep_csv(path: str | os.PathLike, rows: Sequence[tuple[float, APReport]]) -> Path:
    return files.write_csv(path, SWEEP_HEADER, [[repr(t)] + [_num(v) for v in r.row()] for t, r in rows])


def metrics_row(epoch: int, stage: str, cls_loss: float, loc_loss: float, total: float, val_ap: float) -> list[str]:
    return [str(epoch), stage, _num(cls_loss), _num(loc_loss), _num(total), _num(val_ap)]


def metrics_csv_bytes(rows: Sequence[Sequence[str]]) -> bytes:
    return files.csv_bytes(METRICS_HEADER, rows)


def write_correlation_csvs(out_dir: str | os.PathLike, report: CorrelationReport) -> list[Path]:
    """correlation_stage<i>.csv per stage plus correlation_summary.csv."""
    out_dir = Path(out_dir)
    written = []
    summary = []
    for s in report.stages:
        pairs = [[str(s.stage), _num(c), _num(u)] for c, u in zip(s.confidences, s.ious)]
        written.append(files.write_csv(out_dir / f"correlation_stage{s.stage}.csv", PAIRS_HEADER, pairs))
        summary.append(
            [str(s.stage), str(s.num_pairs), _num(s.pearson_r), str(s.low_sample).lower(), str(s.zero_variance).lower()]
            + [_num(b) for b in s.bin_means]
        )
    written.append(files.write_csv(out_dir / "correlation_summary.csv", CORRELATION_HEADER, summary))
    return written


def format_correlation_table(report: CorrelationReport) -> str:
    lines = ["stage   pairs  pearson_r  flags"]
    for s in report.stages:
        flags = ",".join(f for f, on in (("low_sample", s.low_sample), ("zero_variance", s.zero_variance)) if on)
        lines.append(f"{s.stage:<5} {s.num_pairs:>7} {s.pearson_r:>10.4f}  {flags or '-'}")
    return "\n".join(lines) + "\n"
