"""Command line entry point.

Subcommands cover the whole workflow: ``train`` a signal policy,
``eval`` a trained or fresh one, run a ``baseline`` controller,
``compare`` several configs over shared seeds, and ``reward-hist`` to
summarize a decision log. Every run is seeded and config-driven; any
validation failure exits nonzero with a message naming the check.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiment import (
    CONTROLLERS,
    ExperimentConfig,
    ExperimentRunner,
    compare,
    reward_histogram,
)


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        raise ValueError("validation failed: --config is required")
    cfg = ExperimentConfig.from_yaml(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    if getattr(args, "episodes", None) is not None:
        if args.episodes < 1:
            raise ValueError("validation failed: --episodes must be >= 1")
        cfg.episodes = args.episodes
    if getattr(args, "controller", None) is not None:
        cfg.controller = args.controller
    return cfg


def _print_reports(reports) -> None:
    for rep in reports:
        m = rep.metrics
        print(
            f"episode {rep.episode}: queue {m['queue_length']:.3f}, "
            f"travel time {m['travel_time']:.1f}, throughput {m['throughput']}, "
            f"decisions {rep.decisions}"
        )


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if cfg.controller != "policy":
        raise ValueError("validation failed: train requires controller 'policy'")
    runner = ExperimentRunner(cfg)
    if args.resume is not None:
        runner.restore(args.resume)
    reports = runner.train()
    _print_reports(reports)
    print(f"outputs in {runner.out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    runner = ExperimentRunner(cfg)
    if args.checkpoint is not None:
        if cfg.controller != "policy":
            raise ValueError("validation failed: --checkpoint requires controller 'policy'")
        runner.restore(args.checkpoint, fresh_episodes=True)
    reports = runner.evaluate(temperature=args.temperature)
    _print_reports(reports)
    print(f"outputs in {runner.out_dir}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _load_config(args)
    if cfg.controller == "policy":
        raise ValueError(
            "validation failed: baseline requires controller in {fixed, maxpressure, random}"
        )
    runner = ExperimentRunner(cfg)
    reports = runner.evaluate()
    _print_reports(reports)
    print(f"outputs in {runner.out_dir}")
    return 0


def cmd_compare(args) -> int:
    if len(args.config) < 2:
        raise ValueError("validation failed: compare needs at least two --config")
    if not args.seed:
        raise ValueError("validation failed: compare needs at least one --seed")
    configs = [ExperimentConfig.from_yaml(p) for p in args.config]
    labels = [Path(p).stem for p in args.config]
    out = args.out if args.out is not None else "runs/compare"
    rows = compare(configs, args.seed, out, labels=labels)
    for row in rows:
        print(
            f"{row['label']}: median queue {row['queue_length']:.3f}, "
            f"travel time {row['travel_time']:.1f}, throughput {row['throughput']:.0f}"
        )
    print(f"comparison table in {Path(out) / 'comparison.csv'}")
    return 0


def cmd_reward_hist(args) -> int:
    if not Path(args.jsonl).exists():
        raise ValueError(f"validation failed: decision log not found: {args.jsonl}")
    hurdle = args.hurdle
    if hurdle is None:
        if args.config is not None:
            hurdle = ExperimentConfig.from_yaml(args.config).reward.h_r
        else:
            hurdle = 3.0
    hist = reward_histogram(args.jsonl, hurdle, bin_width=args.bin_width)
    print(f"decisions: {hist['n']}")
    print(f"fraction with reward above hurdle {hurdle}: {hist['fraction_above']:.4f}")
    for lo, hi, c in zip(hist["bin_edges"][:-1], hist["bin_edges"][1:], hist["counts"]):
        print(f"  [{lo:+.1f}, {hi:+.1f}): {c}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "reward_hist.json", "w", encoding="utf-8") as fh:
            json.dump(hist, fh, indent=2, sort_keys=True)
        print(f"histogram written to {out / 'reward_hist.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsclab",
        description="Seeded traffic-signal control experiments with a token-level policy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, controller_default=None):
        p.add_argument("--config", type=str, default=None, help="YAML config path")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=str, default=None, help="override the output directory")
        p.add_argument("--episodes", type=int, default=None, help="override the episode count")
        p.add_argument(
            "--controller",
            choices=CONTROLLERS,
            default=controller_default,
            help="override the controller",
        )

    p = sub.add_parser("train", help="train the token policy")
    common(p)
    p.add_argument("--resume", type=str, default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run episodes without learning")
    common(p)
    p.add_argument("--checkpoint", type=str, default=None, help="checkpoint to load")
    p.add_argument(
        "--temperature",
        type=float,
        default=None,
        help="sampling temperature override (small values approach greedy)",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="run a non-learning controller")
    common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("compare", help="run several configs over shared seeds")
    p.add_argument("--config", action="append", default=[], help="repeatable config path")
    p.add_argument("--seed", action="append", type=int, default=[], help="repeatable seed")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("reward-hist", help="histogram of per-decision rewards from a log")
    p.add_argument("jsonl", type=str, help="per-decision JSONL log")
    p.add_argument("--hurdle", type=float, default=None, help="hurdle (default: config or 3.0)")
    p.add_argument("--bin-width", type=float, default=0.5, help="histogram bin width")
    p.add_argument("--config", type=str, default=None, help="config supplying the hurdle")
    p.add_argument("--out", type=str, default=None, help="directory for reward_hist.json")
    p.set_defaults(func=cmd_reward_hist)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
