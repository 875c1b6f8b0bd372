"""Command line entry point.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load
from .pipeline import STAGES, StageError, run_pipeline
from .synth import CitySpec, generate_city

STAGE_HELP = {
    "ingest": "parse events, bin by hour, filter active users",
    "anchors": "detect home/work towers",
    "grid": "Voronoi cells, hexagon grid and user disaggregation",
    "matrix": "walk + transit travel-time matrix",
    "access": "commute means, cumulative access, Palma/Gini, quartiles",
    "lisa": "bivariate local Moran clusters",
    "stats": "cluster composition report",
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="commute-access", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "run"):
        sp = sub.add_parser(name, help=STAGE_HELP.get(name, "run every stage"))
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--threads", type=int, default=1, help="cap on parallel workers")
        sp.add_argument("--seed", type=int, help="override the LISA permutation seed")
        sp.add_argument("--no-cache", action="store_true", help="recompute every stage")
    sp = sub.add_parser("synth", help="write a synthetic city")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--users", type=int, default=1000)
    sp.add_argument("--bts", type=int, default=60)
    sp.add_argument("--routes", type=int, default=10)
    sp.add_argument("--noise", type=float, default=0.2)
    return p


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synth":
        try:
            spec = CitySpec(seed=args.seed, n_users=args.users, n_bts=args.bts, n_routes=args.routes,
                            noise=args.noise)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        try:
            generate_city(spec, args.out)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"synthetic city written to {args.out}")
        return 0

    try:
        cfg = load(args.config)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.out:
        cfg["output"]["dir"] = str(Path(args.out).resolve())
    if args.seed is not None:
        cfg["lisa"]["seed"] = args.seed
    until = "stats" if args.command == "run" else args.command
    try:
        res = run_pipeline(cfg, until=until, threads=args.threads, use_cache=not args.no_cache)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    stages = res["manifest"]["stages"]
    print(json.dumps({"out": cfg["output"]["dir"],
                      "stages": {s["name"]: s["cache"] for s in stages}}, sort_keys=True))
    return 0
