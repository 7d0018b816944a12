"""End-to-end runs of the command-line entry point on the tiny config."""
import csv
from pathlib import Path

import pytest

import src.main as cli
from src.evaluation.ap import REPORTED_THRESHOLDS, APReport
from src.main import main
from src.pipeline.trainer import CHECKPOINT_FILE, METRICS_FILE, RESOLVED_CONFIG_FILE
from src.storage import checkpoint
from tests.helpers.factories import TINY_CONFIG_TEXT, tiny_params, tiny_run_config


@pytest.fixture
def tiny_conf(tmp_path: Path) -> Path:
    path = tmp_path / "tiny.conf"
    path.write_text(TINY_CONFIG_TEXT)
    return path


@pytest.fixture
def trained(tmp_path: Path, tiny_conf: Path) -> Path:
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_conf), "--out", str(out)]) == 0
    return out


def _rows(path: Path) -> list[list[str]]:
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_unknown_command_is_usage_error() -> None:
    with pytest.raises(SystemExit) as err:
        main(["deploy"])
    assert err.value.code == 1


def test_missing_config_exits_1_without_outputs(tmp_path: Path) -> None:
    out = tmp_path / "out"
    assert main(["train", "--config", str(tmp_path / "missing.conf"), "--out", str(out)]) == 1
    assert not out.exists()


def test_bad_config_line_exits_1(tmp_path: Path) -> None:
    conf = tmp_path / "bad.conf"
    conf.write_text("seed = 1\nnum_stages two\n")
    assert main(["train", "--config", str(conf), "--out", str(tmp_path / "out")]) == 1


def test_train_writes_artifacts(trained: Path) -> None:
    assert (trained / CHECKPOINT_FILE).is_file()
    assert (trained / RESOLVED_CONFIG_FILE).read_text().startswith("seed = 0\n")
    rows = _rows(trained / METRICS_FILE)
    assert rows[0] == ["epoch", "stage", "cls_loss", "loc_loss", "total", "val_ap"]
    # 2 epochs x 2 stages
    assert [r[:2] for r in rows[1:]] == [["1", "1"], ["1", "2"], ["2", "1"], ["2", "2"]]
    _, meta = checkpoint.load(trained / CHECKPOINT_FILE)
    assert meta["num_stages"] == "2"
    assert meta["seed"] == "0"


def test_train_is_reproducible(tmp_path: Path, tiny_conf: Path) -> None:
    for name in ("a", "b"):
        assert main(["train", "--config", str(tiny_conf), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / CHECKPOINT_FILE).read_bytes() == (tmp_path / "b" / CHECKPOINT_FILE).read_bytes()
    assert (tmp_path / "a" / METRICS_FILE).read_bytes() == (tmp_path / "b" / METRICS_FILE).read_bytes()


def test_seed_flag_changes_the_run(tmp_path: Path, tiny_conf: Path) -> None:
    main(["train", "--config", str(tiny_conf), "--out", str(tmp_path / "a")])
    main(["train", "--config", str(tiny_conf), "--seed", "1", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / CHECKPOINT_FILE).read_bytes() != (tmp_path / "b" / CHECKPOINT_FILE).read_bytes()


def test_eval_reports_each_stage_and_ensemble(trained: Path, tiny_conf: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code = main(["eval", "--config", str(tiny_conf), "--checkpoint", str(trained / CHECKPOINT_FILE), "--out", str(trained)])
    assert code == 0
    rows = _rows(trained / "eval.csv")
    assert [r[0] for r in rows[1:]] == ["1", "2", "1~2"]
    assert all(0.0 <= float(v) <= 1.0 for r in rows[1:] for v in r[1:])
    assert "1~2" in capsys.readouterr().out


def test_eval_with_mismatched_architecture_exits_2(trained: Path, tmp_path: Path) -> None:
    one_stage = tmp_path / "one.conf"
    one_stage.write_text(TINY_CONFIG_TEXT.replace("num_stages = 2", "num_stages = 1"))
    code = main(["eval", "--config", str(one_stage), "--checkpoint", str(trained / CHECKPOINT_FILE), "--out", str(tmp_path)])
    assert code == 2
    assert not (tmp_path / "eval.csv").exists()


def test_eval_missing_checkpoint_exits_2(tmp_path: Path, tiny_conf: Path) -> None:
    code = main(["eval", "--config", str(tiny_conf), "--checkpoint", str(tmp_path / "none.json"), "--out", str(tmp_path)])
    assert code == 2


def test_analyze_writes_correlation_files(trained: Path, tiny_conf: Path) -> None:
    code = main(["analyze", "--config", str(tiny_conf), "--checkpoint", str(trained / CHECKPOINT_FILE), "--out", str(trained)])
    assert code == 0
    assert (trained / "correlation_stage1.csv").is_file()
    assert (trained / "correlation_stage2.csv").is_file()
    summary = _rows(trained / "correlation_summary.csv")
    assert [r[0] for r in summary[1:]] == ["1", "2"]


def test_sweep_trains_one_run_per_threshold(tmp_path: Path, tiny_conf: Path) -> None:
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(tiny_conf), "--t-fg", "0.5,0.7", "--out", str(out)]) == 0
    assert (out / "t_fg_0.5" / CHECKPOINT_FILE).is_file()
    assert "stage.2.t_bg = 0.6" in (out / "t_fg_0.7" / RESOLVED_CONFIG_FILE).read_text()
    rows = _rows(out / "sweep.csv")
    assert rows[0][0] == "t_fg"
    assert [r[0] for r in rows[1:]] == ["0.5", "0.7"]


def test_sweep_needs_two_stages(tmp_path: Path) -> None:
    conf = tmp_path / "one.conf"
    conf.write_text(TINY_CONFIG_TEXT.replace("num_stages = 2", "num_stages = 1"))
    assert main(["sweep", "--config", str(conf), "--t-fg", "0.6", "--out", str(tmp_path / "s")]) == 1


def test_sweep_rejects_malformed_thresholds(tiny_conf: Path) -> None:
    with pytest.raises(SystemExit) as err:
        main(["sweep", "--config", str(tiny_conf), "--t-fg", "high"])
    assert err.value.code == 1


def test_gradcheck_with_injected_fault_exits_3(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["gradcheck", "--instances", "1", "--inject-fault", "sigmoid"]) == 3
    out = capsys.readouterr().out
    sigmoid_line = next(line for line in out.splitlines() if line.startswith("sigmoid"))
    assert sigmoid_line.endswith("FAIL")


def test_gradcheck_passes_on_clean_ops(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["gradcheck", "--instances", "2"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_selftest_passes(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "ap_oracle" in out


def test_ensemble_row_always_averages_stage_scores(monkeypatch: pytest.MonkeyPatch) -> None:
    cfg = tiny_run_config(ensemble_mode="last")
    seen: list[tuple[int | None, str]] = []

    def fake_evaluate(params, scenes, run_cfg, workers, test_stage=None):
        seen.append((test_stage, run_cfg.ensemble_mode))
        return APReport(ap=0.0, ap_at={t: 0.0 for t in REPORTED_THRESHOLDS})

    monkeypatch.setattr(cli, "evaluate_ap", fake_evaluate)
    rows = cli.stage_rows(tiny_params(cfg), cfg, workers=1)
    assert [label for label, _ in rows] == ["1", "2", "1~2"]
    assert seen[-1] == (None, "average")
