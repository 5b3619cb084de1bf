"""Command-line entry point: ``tmpp <subcommand> --config run.json``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import pipeline as pl
from .datagen import dataset_stats
from .eval import histogram_csv
from .log_model import load_log
from .models import ALLOWED_SCHEMES, MODEL_CLASSES

SUBCOMMANDS = ("generate", "stats", *pl.STAGES, "pipeline")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tmpp", description="Purchase prediction from behavior logs.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--shards", type=int, default=None, help="override the configured shard count")
        p.add_argument("--csv", action="store_true", help="print tables as CSV")
        p.add_argument("-q", "--quiet", action="store_true", help="only print results and errors")
        if name == "stats":
            p.add_argument("--log", default=None, help="log file to describe (default: the configured input log)")
        if name == "train":
            p.add_argument("--model", choices=sorted(MODEL_CLASSES), default=None)
            p.add_argument("--scheme", choices=("fixed", "sliding"), default=None)
        if name == "pipeline":
            p.add_argument("--no-resume", action="store_true", help="rerun every stage")
    return parser


def _model_name(model: str | None, scheme: str | None) -> str | None:
    if model is None:
        if scheme is not None:
            raise ValueError("--scheme needs --model")
        return None
    if model == "global":
        return "global"
    scheme = scheme or "fixed"
    if scheme not in ALLOWED_SCHEMES[model]:
        raise ValueError(f"model {model!r} is not trained under the {scheme!r} scheme")
    return f"{model}_{scheme}"


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    cfg = pl.RunConfig.load(args.config)
    if args.shards is not None:
        cfg = dataclasses.replace(cfg, shards=args.shards)

    cmd = args.command
    if cmd == "generate":
        path = pl.stage_generate(cfg)
        print(f"wrote {path}")
        return 0
    if cmd == "stats":
        log = load_log(args.log if args.log else cfg.log_path)
        report = dataset_stats(log)
        sys.stdout.write(report.to_csv() if args.csv else report.to_text())
        return 0
    if cmd == "pipeline":
        status = pl.pipeline(cfg, resume=not args.no_resume)
        for stage, what in status.items():
            logging.getLogger("tmpp").info("%-16s %s", stage, what)
        wd = pl.Workdir(cfg)
        sys.stdout.write((wd / ("report.csv" if args.csv else "report.txt")).read_text(encoding="utf-8"))
        return 0

    wd = pl.Workdir(cfg)
    if cmd == "train":
        pl.stage_train(wd, _model_name(args.model, args.scheme))
        return 0
    if cmd == "evaluate":
        report = pl.stage_evaluate(wd)
        sys.stdout.write(report.to_csv() if args.csv else report.to_text())
        return 0
    if cmd == "analyze-hits":
        hist = pl.stage_analyze_hits(wd)
        sys.stdout.write(histogram_csv(hist))
        return 0
    pl.STAGE_FUNCS[cmd](wd)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except (ValueError, FileNotFoundError) as exc:
        print(f"tmpp: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
