"""Command-line entry point: ``a2bas {ingest,train,refine,sweep,compare,eval}``.

Exit codes: 0 success, 1 other library error, 2 config, 3 data file,
4 parse, 5 divergence, 6 checkpoint, 7 evaluation, 8 compare finished with
at least one failed method.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import pipeline
from .config import RunConfig, load_config, override
from .errors import A2basError, ConfigError

log = logging.getLogger("a2bas")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--data", dest="dataset", help="ratings file or split directory")
    p.add_argument("--delimiter")
    p.add_argument("--densify", action="store_const", const=True, default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker threads (0 = all cores)")
    p.add_argument("--out")
    p.add_argument("--metric", choices=("rmse", "mae"))
    p.add_argument("--optimizer", choices=("sgd", "adam", "plfa"))
    p.add_argument("--f", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--checkpoint-format", choices=("bin", "json"))
    p.add_argument("--al0", dest="refine_al0", type=float)
    p.add_argument("--max-rounds", dest="refine_max_rounds", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="a2bas", description="Latent factor training and beetle-search refinement.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("ingest", "parse and split a ratings file into a split directory"),
        ("train", "train a model from fresh factors"),
        ("refine", "refine a checkpoint entity by entity"),
        ("sweep", "sweep the initial antennae length"),
        ("compare", "Adam, SGD, PLFA and PLFA+refinement on one split"),
        ("eval", "recompute validation and test metrics of a checkpoint"),
    ]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name in ("refine", "eval"):
            p.add_argument("--checkpoint", required=True)
        if name == "sweep":
            p.add_argument("--checkpoint")
            p.add_argument("--sweep", type=lambda s: tuple(float(x) for x in s.split(",")),
                           help="comma-separated antennae lengths")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    threads = args.threads
    if threads == 0:
        threads = os.cpu_count() or 1
    keys = ("dataset", "delimiter", "densify", "seed", "out", "metric", "optimizer", "f", "eta", "lam",
            "max_epochs", "checkpoint_format", "refine_al0", "refine_max_rounds", "sweep")
    changes = {k: getattr(args, k, None) for k in keys}
    return override(cfg, threads=threads, **changes)


def run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "ingest":
        result = pipeline.run_ingest(cfg)
    elif cmd == "train":
        result = pipeline.run_train(cfg)
    elif cmd == "refine":
        result = pipeline.run_refine(cfg, args.checkpoint)
    elif cmd == "sweep":
        result = pipeline.run_sweep(cfg, args.checkpoint)
    elif cmd == "compare":
        result = pipeline.run_compare(cfg)
    else:
        result = pipeline.run_eval(cfg, args.checkpoint)
    print(json.dumps(result, indent=2, sort_keys=True))
    if cmd == "compare" and any(r["status"] != "ok" for r in result["rows"]):
        return pipeline.EXIT_PARTIAL
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except A2basError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (TypeError, ValueError) as exc:
        # malformed overrides that slipped past the dataclass checks
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
