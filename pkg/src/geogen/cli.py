"""Command-line entry point.

Exit codes: 0 success, 1 validation/invariant failure, 2 missing inputs.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .config import PipelineConfig
from .data_model import DatasetError
from .evaluation import EvaluationError
from .latent import LatentError


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the pipeline config JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="override the config output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geogen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("ingest", "parse the dataset, build trajectories, split, and write the catalog"),
        ("reconstruct", "build latent movement sequences for the train/val splits"),
        ("train-stage1", "train the diffusion denoiser"),
        ("train-stage2", "train the coarse-to-fine translator"),
        ("generate", "sample synthetic trajectories end to end"),
        ("evaluate", "fidelity report, utility benchmark, CDF/density CSVs"),
        ("sweep", "granularity sweep: throughput/memory per interval"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "train-stage1":
            p.add_argument("--resume", default=None, help="resume from a stage-1 checkpoint")
        if name == "generate":
            p.add_argument("--count", type=int, default=100, help="number of trajectories to sample")
        if name == "sweep":
            p.add_argument(
                "--intervals",
                required=True,
                help="comma-separated slot widths in seconds, e.g. 3600,7200,14400",
            )
    return parser


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "ingest":
            pipeline.cmd_ingest(cfg)
        elif args.command == "reconstruct":
            pipeline.cmd_reconstruct(cfg)
        elif args.command == "train-stage1":
            pipeline.cmd_train_stage1(cfg, resume=args.resume)
        elif args.command == "train-stage2":
            pipeline.cmd_train_stage2(cfg)
        elif args.command == "generate":
            pipeline.cmd_generate(cfg, count=args.count, seed=args.seed)
        elif args.command == "evaluate":
            pipeline.cmd_evaluate(cfg)
        elif args.command == "sweep":
            intervals = [float(v) for v in args.intervals.split(",") if v]
            pipeline.cmd_sweep(cfg, intervals)
        return 0
    except FileNotFoundError as exc:
        print(f"geogen: missing input: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, LatentError, EvaluationError, ValueError, RuntimeError) as exc:
        print(f"geogen: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
