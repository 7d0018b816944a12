"""
Command-line entry point.

    python -m src.main train     --config configs/default.conf --out runs/default
    python -m src.main eval      --config configs/default.conf --checkpoint runs/default/checkpoint.json
    python -m src.main analyze   --config configs/default.conf --checkpoint runs/default/checkpoint.json
    python -m src.main sweep     --config configs/default.conf --t-fg 0.5,0.6,0.7
    python -m src.main gradcheck [--inject-fault focal_loss]
    python -m src.main selftest

Exit codes: 0 ok, 1 usage or config error, 2 runtime error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from src.assignment.assigner import StageConfig
from src.config.run_config import RunConfig, build_run_config, load_run_config
from src.config.settings import settings
from src.evaluation import reports
from src.evaluation.ap import APReport
from src.evaluation.correlation import correlation_report
from src.model.params import ArchSpec, CascadeParams, init_params
from src.pipeline.synthetic import make_split
from src.pipeline.trainer import evaluate_ap, train
from src.storage import checkpoint
from src.utils.errors import CascadeError, ConfigError
from src.utils.logging import logger
from src.verification import gradcheck_suite, selftest

EXIT_OK = 0
EXIT_USAGE = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _t_fg_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("need at least one threshold")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cascade", description="Cascaded single-stage detector on synthetic scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_checkpoint: bool = False) -> None:
        p.add_argument("--config", type=Path, help="flat key = value run config (defaults when omitted)")
        p.add_argument("--out", type=Path, default=None, help=f"output directory (default {settings.CASCADE_DEFAULT_OUT})")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=None, help=f"threads for data and eval (default {settings.CASCADE_WORKERS})")
        if needs_checkpoint:
            p.add_argument("--checkpoint", type=Path, required=True)

    common(sub.add_parser("train", help="train and write checkpoint.json, metrics.csv"))
    common(sub.add_parser("eval", help="AP table per test stage and for the ensemble"), needs_checkpoint=True)
    common(sub.add_parser("analyze", help="confidence vs IoU correlation per stage"), needs_checkpoint=True)
    sweep = sub.add_parser("sweep", help="train once per stage-2 foreground threshold")
    common(sweep)
    sweep.add_argument("--t-fg", type=_t_fg_list, required=True, help="comma-separated stage-2 T+ values")

    gradcheck = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--instances", type=int, default=gradcheck_suite.INSTANCES)
    gradcheck.add_argument("--inject-fault", choices=sorted(gradcheck_suite.CASES), default=None)

    check = sub.add_parser("selftest", help="oracle and degeneracy property checks")
    check.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config) if args.config is not None else build_run_config({})
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    logger.info(
        "config: source=%s seed=%d stages=%d use_fcm=%s",
        args.config or "<defaults>",
        cfg.seed,
        cfg.num_stages,
        cfg.use_fcm,
    )
    return cfg


def load_model(cfg: RunConfig, path: Path) -> CascadeParams:
    arrays, meta = checkpoint.load(path)
    params = init_params(ArchSpec.from_config(cfg), cfg.seed)
    params.load_state_dict(arrays)
    logger.info("checkpoint: path=%s tensors=%d stages=%s", path, len(arrays), meta.get("num_stages", "?"))
    return params


def stage_rows(params: CascadeParams, cfg: RunConfig, workers: int) -> list[tuple[str, APReport]]:
    """One row per single test stage, then the averaged-score ensemble row when there are several stages."""
    scenes = make_split(cfg, "val", cfg.val_scenes, workers)
    rows = [(str(t), evaluate_ap(params, scenes, cfg, workers, test_stage=t)) for t in range(1, cfg.num_stages + 1)]
    if cfg.num_stages > 1:
        averaged = cfg.with_overrides(ensemble_mode="average")
        rows.append((f"1~{cfg.num_stages}", evaluate_ap(params, scenes, averaged, workers)))
    return rows


def run_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    train(cfg, args.out, args.workers)
    return EXIT_OK


def run_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    params = load_model(cfg, args.checkpoint)
    rows = stage_rows(params, cfg, args.workers)
    sys.stdout.write(reports.format_ap_table(rows))
    reports.write_eval_csv(args.out / "eval.csv", rows)
    logger.info("eval: rows=%d ap=%.4f", len(rows), rows[-1][1].ap)
    return EXIT_OK


def run_analyze(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    params = load_model(cfg, args.checkpoint)
    scenes = make_split(cfg, "analysis", cfg.val_scenes, args.workers)
    report = correlation_report(params, scenes, cfg, workers=args.workers)
    sys.stdout.write(reports.format_correlation_table(report))
    reports.write_correlation_csvs(args.out, report)
    return EXIT_OK


def run_sweep(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if cfg.num_stages < 2:
        raise ConfigError("sweep varies the stage-2 threshold; num_stages must be >= 2")
    results = []
    for t_fg in args.t_fg:
        stages = list(cfg.stages)
        stages[1] = StageConfig(
            t_fg=t_fg,
            t_bg=round(t_fg - 0.1, 10),
            lambda_=stages[1].lambda_,
            alpha=stages[1].alpha,
        )
        run_cfg = cfg.with_overrides(stages=stages)
        run_dir = args.out / f"t_fg_{t_fg:g}"
        result = train(run_cfg, run_dir, args.workers)
        val_scenes = make_split(run_cfg, "val", run_cfg.val_scenes, args.workers)
        results.append((t_fg, evaluate_ap(result.params, val_scenes, run_cfg, args.workers)))
        logger.info("sweep: t_fg=%g ap=%.4f", t_fg, results[-1][1].ap)
    reports.write_sweep_csv(args.out / "sweep.csv", results)
    sys.stdout.write(reports.format_ap_table([(f"t_fg={t:g}", r) for t, r in results]))
    return EXIT_OK


def run_gradcheck(args: argparse.Namespace) -> int:
    result = gradcheck_suite.run_gradcheck(seed=args.seed, instances=args.instances, inject_fault=args.inject_fault)
    sys.stdout.write(gradcheck_suite.format_reports(result))
    gradcheck_suite.require_pass(result)
    return EXIT_OK


def run_selftest(args: argparse.Namespace) -> int:
    results = selftest.run_selftest(seed=args.seed)
    sys.stdout.write(selftest.format_results(results))
    selftest.require_pass(results)
    return EXIT_OK


COMMANDS = {
    "train": run_train,
    "eval": run_eval,
    "analyze": run_analyze,
    "sweep": run_sweep,
    "gradcheck": run_gradcheck,
    "selftest": run_selftest,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if hasattr(args, "out"):
        args.out = args.out if args.out is not None else Path(settings.CASCADE_DEFAULT_OUT)
        args.workers = args.workers if args.workers is not None else settings.CASCADE_WORKERS
    try:
        return COMMANDS[args.command](args)
    except CascadeError as e:
        logger.error("%s: %s", args.command, e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
