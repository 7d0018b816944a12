"""Directional checks on short training runs over several seeds.

Each trend must hold for at least two of three seeds. The runs are the shipped
configs cut down in epochs and scene counts, so these are marked slow.
"""
from functools import lru_cache
from pathlib import Path

import pytest

from src.config.run_config import RunConfig, load_run_config
from src.evaluation.ap import APReport
from src.evaluation.correlation import correlation_report
from src.model.params import CascadeParams
from src.pipeline.synthetic import make_split
from src.pipeline.trainer import Trainer, evaluate_ap

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = (0, 1, 2)
SHORT_RUN = {"epochs": 6, "train_scenes": 160, "val_scenes": 64}

pytestmark = pytest.mark.slow


@lru_cache(maxsize=None)
def _trained(variant: str, seed: int) -> tuple[RunConfig, CascadeParams]:
    cfg = load_run_config(CONFIGS / f"{variant}.conf").with_overrides(seed=seed, **SHORT_RUN)
    scenes = make_split(cfg, "train", cfg.train_scenes)
    return cfg, Trainer(cfg).run(scenes, []).params


@lru_cache(maxsize=None)
def _ap(variant: str, seed: int) -> APReport:
    cfg, params = _trained(variant, seed)
    return evaluate_ap(params, make_split(cfg, "val", cfg.val_scenes), cfg)


def _holds_for_most_seeds(results: list[bool]) -> bool:
    return sum(results) >= 2


@pytest.mark.parametrize("threshold", [0.8, 0.9])
def test_cascade_beats_single_stage_at_strict_iou(threshold: float) -> None:
    wins = [_ap("default", s).ap_at[threshold] > _ap("baseline", s).ap_at[threshold] for s in SEEDS]
    assert _holds_for_most_seeds(wins), wins


def test_fcm_beats_shared_features() -> None:
    wins = [_ap("default", s).ap > _ap("naive_cascade", s).ap for s in SEEDS]
    assert _holds_for_most_seeds(wins), wins


def test_later_stage_scores_track_localization_better() -> None:
    wins = []
    for s in SEEDS:
        cfg, params = _trained("default", s)
        report = correlation_report(params, make_split(cfg, "val", cfg.val_scenes), cfg)
        wins.append(report.stage(2).pearson_r > report.stage(1).pearson_r)
    assert _holds_for_most_seeds(wins), wins
