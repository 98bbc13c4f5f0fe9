"""
Command line: ``erlre2 train | eval | ablate``.
"""
import argparse
import dataclasses
import json
import os
import sys
from typing import List, Optional

from loguru import logger

from erlre2.config import RunConfig, load_config
from erlre2.errors import ErlError
from erlre2.harness import ABLATION_AXES, ablate, evaluate, train
from erlre2.records import RecordOptions, to_record


def _configure_logging(verbose: bool, out_dir: Optional[str] = None):
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "INFO")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        logger.add(os.path.join(out_dir, "run.log"), level="DEBUG")


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        changes["out"] = args.out
    return dataclasses.replace(cfg, **changes).validate()


def _train(args) -> int:
    cfg = _load(args)
    _configure_logging(args.verbose, cfg.out)
    log = train(cfg)
    print(json.dumps(to_record(log.summary, RecordOptions(with_cls=False)), sort_keys=True))
    return 0


def _eval(args) -> int:
    _configure_logging(args.verbose)
    result = evaluate(args.checkpoint, episodes=args.episodes, seed=args.seed, env_name=args.env)
    print(json.dumps(to_record(result, RecordOptions(with_cls=False)), sort_keys=True))
    return 0


def _ablate(args) -> int:
    cfg = _load(args)
    _configure_logging(args.verbose, cfg.out)
    cells = ablate(cfg, args.axis)
    for cell in cells:
        summary = cell.log.summary
        print(f"{cell.label}\t{summary.total_steps}\t{summary.best_fitness}\t{summary.eval_return}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="erlre2",
        description="Hybrid evolutionary reinforcement learning on a two-scale policy.",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one run")
    p_train.add_argument("--config", help="key = value config file")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--out", help="output directory")
    p_train.set_defaults(handler=_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint without exploration noise")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int)
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--env", help="override the environment recorded in the checkpoint")
    p_eval.set_defaults(handler=_eval)

    p_ablate = sub.add_parser("ablate", help="train every cell of one ablation axis")
    p_ablate.add_argument("--config", help="key = value config file")
    p_ablate.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    p_ablate.add_argument("--seed", type=int)
    p_ablate.add_argument("--out", help="output directory")
    p_ablate.set_defaults(handler=_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ErlError as e:
        logger.error("{}: {}", type(e).__name__, e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
