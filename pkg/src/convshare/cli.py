"""Command-line entry point: ``convshare <subcommand> --config scenario.json --out DIR``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, load_config
from .netsim import MODES

SUBCOMMANDS = ("gen-scene", "calibrate", "run", "feasibility", "eval", "all")


def _delta_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from exc
    if not values or any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("deltas must be a non-empty list of non-negative numbers")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convshare", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="scenario JSON (default: the bundled occluded two-camera scenario)")
    common.add_argument("--out", type=Path, default=None, help="artifact directory (default: config 'out' or ./out)")
    common.add_argument("--seed", type=int, default=None, help="override the scenario's world seed")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-scene", parents=[common], help="render stimuli, ground truth and homographies")
    sub.add_parser("calibrate", parents=[common], help="select filters and write one fusion plan per node")
    sub.add_parser("run", parents=[common], help="simulate baseline and every collaborator set")
    feas = sub.add_parser("feasibility", parents=[common], help="sweep layer-pair feasibility over delta")
    feas.add_argument("--delta-ms", type=_delta_list, default=None, help="comma-separated slack values in ms")
    feas.add_argument("--mode", choices=MODES, default=None)
    sub.add_parser("eval", parents=[common], help="score runs against ground truth and write the gains table")
    everything = sub.add_parser("all", parents=[common], help="every stage in order")
    everything.add_argument("--delta-ms", type=_delta_list, default=None)
    everything.add_argument("--mode", choices=MODES, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed)
        out = args.out or Path(cfg.out or "out")
        out.mkdir(parents=True, exist_ok=True)
        cmd = args.command
        if cmd in ("gen-scene", "all"):
            pipeline.gen_scene(cfg, out)
        if cmd in ("calibrate", "all"):
            pipeline.calibrate(cfg, out)
        if cmd in ("run", "all"):
            pipeline.run(cfg, out)
        if cmd in ("feasibility", "all"):
            text = pipeline.feasibility(cfg, out, args.delta_ms, args.mode)
            if cmd == "feasibility":
                sys.stdout.write(text)
        if cmd in ("eval", "all"):
            pipeline.evaluate_runs(cfg, out)
            sys.stdout.write((out / "eval" / "table.csv").read_text())
    except (ConfigError, pipeline.MissingArtifact, ValueError) as exc:
        print(f"convshare: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
