"""The ``plan`` command line: map generation, data collection, training,
evaluation, the online loop, and the data-efficiency benchmark.

Exit codes: 0 success, 2 validation error (bad flags/inputs), 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

from loha.gridmap import MapFormatError
from loha.harness import drivers
from loha.harness.drivers import ValidationError


def _int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _hyperparams(args) -> dict:
    hp = {}
    if args.epochs is not None:
        hp["epochs"] = args.epochs
    if args.lr is not None:
        hp["lr"] = args.lr
    if args.batch is not None:
        hp["batch_size"] = args.batch
    if args.hidden is not None:
        hp["hidden"] = _int_list(args.hidden)
    if getattr(args, "no_alpha_weight", False):
        hp["alpha_weighting"] = False
    return hp


def _add_common(parser, domain=True, k=True, w=True):
    parser.add_argument("--seed", type=int, required=True, help="root random seed")
    parser.add_argument("--out", required=True, help="output file or directory")
    if domain:
        parser.add_argument("--domain", choices=["grid2d", "car4d"], default="car4d")
    if k:
        parser.add_argument("--k", type=int, default=4, help="local window size (cells)")
    if w:
        parser.add_argument("--w", type=float, default=2.0, help="suboptimality bound")
    parser.add_argument("--expansion-limit", type=int, default=200_000)


def _add_distance_band(parser):
    parser.add_argument("--min-dist", type=float, default=30.0,
                        help="min start-goal separation (cells)")
    parser.add_argument("--max-dist", type=float, default=90.0,
                        help="max start-goal separation (cells)")


def _add_training_flags(parser):
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--batch", type=int, default=None)
    parser.add_argument("--hidden", default=None, help="hidden layer sizes, e.g. 64,64")
    parser.add_argument("--no-alpha-weight", action="store_true",
                        help="train without progress weighting (ablation)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plan",
        description="Lattice planning with learned local-residual heuristics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-maps", help="generate random obstacle maps")
    p.add_argument("--out", required=True)
    p.add_argument("--num-maps", type=int, default=5)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("collect", help="backtracking collection from global searches")
    p.add_argument("--map-dir", required=True)
    p.add_argument("--problems-per-map", type=int, default=2)
    _add_common(p)
    _add_distance_band(p)

    p = sub.add_parser("oracle", help="local-oracle collection baseline")
    p.add_argument("--map-dir", required=True)
    p.add_argument("--states-per-map", type=int, default=100)
    p.add_argument("--problems-per-map", type=int, default=1)
    p.add_argument("--escape", choices=["border", "beyond"], default="border")
    p.add_argument("--closed-list-ablation", action="store_true",
                   help="treat the global closed list as obstacles")
    _add_common(p)
    _add_distance_band(p)

    p = sub.add_parser("train", help="train the residual regressor")
    p.add_argument("--samples", required=True)
    p.add_argument("--problems", default=None,
                   help="problems manifest (default: <samples>.problems.json)")
    p.add_argument("--map-dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_training_flags(p)

    p = sub.add_parser("eval", help="compare against weighted A* on held-out problems")
    p.add_argument("--map-dir", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--num-problems", type=int, default=50)
    p.add_argument("--unweighted-priority", action="store_true",
                   help="focal priority g+h+residual instead of g+w*(h+residual)")
    _add_common(p)
    _add_distance_band(p)

    p = sub.add_parser("online", help="collect/retrain loop with held-out tracking")
    p.add_argument("--map-dir", required=True)
    p.add_argument("--batch-size", type=int, default=5)
    p.add_argument("--rounds", type=int, default=6)
    p.add_argument("--eval-problems", type=int, default=50)
    p.add_argument("--fine-tune", action="store_true",
                   help="continue training instead of retraining from scratch")
    _add_common(p)
    _add_distance_band(p)
    _add_training_flags(p)

    p = sub.add_parser("bench-efficiency", help="expansions-per-sample by window size")
    p.add_argument("--map-dir", required=True)
    p.add_argument("--problems-per-map", type=int, default=2)
    p.add_argument("--states-per-map", type=int, default=60)
    _add_common(p, k=False)
    p.add_argument("--k", type=_int_list, default=[2, 4, 8],
                   help="comma-separated window sizes, e.g. 2,4,8")
    _add_distance_band(p)

    return parser


def run(args) -> dict:
    if args.command == "gen-maps":
        return drivers.cmd_gen_maps(args.out, args.num_maps, args.width, args.height,
                                    args.density, args.seed)
    if args.command == "collect":
        return drivers.cmd_collect(args.map_dir, args.domain, args.k, args.w,
                                   args.problems_per_map, args.seed, args.out,
                                   args.expansion_limit, args.min_dist, args.max_dist)
    if args.command == "oracle":
        return drivers.cmd_oracle(args.map_dir, args.domain, args.k, args.w,
                                  args.states_per_map, args.seed, args.out,
                                  args.expansion_limit, args.problems_per_map,
                                  args.escape, args.closed_list_ablation,
                                  args.min_dist, args.max_dist)
    if args.command == "train":
        problems = args.problems
        if problems is None:
            problems = str(drivers._problems_path(args.samples))
        return drivers.cmd_train(args.samples, problems, args.map_dir, args.out,
                                 args.seed, _hyperparams(args))
    if args.command == "eval":
        return drivers.cmd_eval(args.map_dir, args.model, args.domain, args.k, args.w,
                                args.num_problems, args.seed, args.out,
                                args.expansion_limit, args.min_dist, args.max_dist,
                                weighted_priority=not args.unweighted_priority)
    if args.command == "online":
        return drivers.cmd_online(args.map_dir, args.domain, args.k, args.w,
                                  args.batch_size, args.rounds, args.eval_problems,
                                  args.seed, args.out, args.expansion_limit,
                                  args.min_dist, args.max_dist, _hyperparams(args),
                                  args.fine_tune)
    if args.command == "bench-efficiency":
        return drivers.cmd_bench_efficiency(args.map_dir, args.domain, args.k, args.w,
                                            args.problems_per_map, args.states_per_map,
                                            args.seed, args.out, args.expansion_limit,
                                            args.min_dist, args.max_dist)
    raise ValidationError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        summary = run(args)
    except (ValidationError, MapFormatError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 3
    print(json.dumps(summary, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
