"""Command-line front end.

Every command writes its result next to a ``*.manifest.json`` file that
records the command line, inputs, configuration, seed, package version and
wall time.

Exit codes: 0 success, 2 invalid input, 3 optimizer failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .graphs import (
    FeasibleSetSpec,
    GraphError,
    build_graph,
    load_chain,
    load_graph,
    save_graph,
    validate_chain,
)
from .hitting import return_time_distributions
from .intruder import IntruderError, IntruderParams, attack_plan, capture_curve, curve_to_csv
from .metrics import MetricError, horizon
from .optimize import OptimizationError, OptimizerConfig, evaluate_all, optimize_chain

EXIT_OK, EXIT_INVALID, EXIT_OPTIMIZER = 0, 2, 3

BUILTIN_GRAPHS = ("ring", "grid", "complete", "sf_crime_map")


class InputError(Exception):
    """Bad command-line input; maps to exit code 2."""


def resolve_graph(name: str):
    """Load a graph file, or build a shipped one.

    Shipped graphs are named ``ring``, ``ring:<n>``, ``grid``,
    ``grid:<rows>x<cols>``, ``complete:<n>`` or ``sf_crime_map``.
    """
    kind, _, arg = name.partition(":")
    if kind in BUILTIN_GRAPHS and not Path(name).exists():
        try:
            if kind == "grid" and arg:
                rows, cols = (int(x) for x in arg.lower().split("x"))
                return build_graph("grid", rows=rows, cols=cols)
            if kind in ("ring", "complete") and arg:
                return build_graph(kind, n=int(arg))
        except ValueError as exc:
            raise InputError(f"bad graph size in {name!r}") from exc
        return build_graph(kind)
    return load_graph(name)


def parse_tau_range(text: str) -> range:
    """``"a..b"`` (inclusive) or a single integer."""
    try:
        if ".." in text:
            a, b = (int(x) for x in text.split("..", 1))
        else:
            a = b = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"tau range must look like 1..20, got {text!r}") from exc
    if a < 1 or b < a:
        raise argparse.ArgumentTypeError(f"tau range {text!r} must satisfy 1 <= a <= b")
    return range(a, b + 1)


def _load_feasible_chain(path, spec):
    P = load_chain(path)
    report = validate_chain(P, spec)
    if not report.feasible:
        raise InputError(f"chain {path} is not feasible for the graph: {report}")
    return P


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def write_manifest(out: Path, args, argv, inputs, config, started: float) -> Path:
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "inputs": inputs,
        "config": config,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - started, 6),
    }
    path = out.with_name(out.name + ".manifest.json") if out.suffix else out / "manifest.json"
    _write(path, json.dumps(manifest, indent=2))
    return path


def cmd_build(args):
    graph, pi = resolve_graph(args.kind)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_graph(out, graph, pi)
    return out, {"graph": args.kind}, {}


def cmd_eval(args):
    graph, pi = resolve_graph(args.graph)
    spec = FeasibleSetSpec(graph, pi, args.eps)
    P = _load_feasible_chain(args.chain, spec)
    metrics = evaluate_all(P, spec, args.eta_eval)
    out = Path(args.out)
    _write(out, metrics.to_json())
    return out, {"graph": args.graph, "chain": args.chain}, {"eta_eval": args.eta_eval, "eps": args.eps}


def cmd_optimize(args):
    graph, pi = resolve_graph(args.graph)
    config = OptimizerConfig(
        eta=args.eta, eps=args.eps, max_iters=args.max_iters, starts=args.starts,
        seed=args.seed, threads=args.threads,
    )
    spec = FeasibleSetSpec(graph, pi, config.eps)
    result = optimize_chain(args.objective.replace("-", "_"), spec, config)
    out = Path(args.out)
    _write(out, result.to_json())
    echo = {k: getattr(config, k) for k in ("eta", "eps", "max_iters", "starts", "seed", "threads")}
    echo["objective"] = args.objective
    return out, {"graph": args.graph}, echo


def cmd_intruder(args):
    graph, pi = resolve_graph(args.graph)
    spec = FeasibleSetSpec(graph, pi, args.eps)
    if args.tau is not None:
        if args.tau < 1:
            raise InputError("tau must be >= 1")
        args.tau_range = range(args.tau, args.tau + 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.chain:
        P = _load_feasible_chain(path, spec)
        stem = Path(path).stem
        curve = capture_curve(P, graph, pi, args.delta, args.tau_range)
        _write(out / f"{stem}.capture.csv", curve_to_csv(curve))
        if args.plan_at is not None:
            plan = attack_plan(P, graph, pi, IntruderParams(args.plan_at, args.delta))
            _write(out / f"{stem}.plan.json", plan.to_json())
    config = {"delta": args.delta, "tau_range": [args.tau_range.start, args.tau_range.stop - 1],
              "plan_at": args.plan_at}
    return out, {"graph": args.graph, "chains": list(args.chain)}, config


def cmd_distributions(args):
    graph, pi = resolve_graph(args.graph)
    spec = FeasibleSetSpec(graph, pi, args.eps)
    P = _load_feasible_chain(args.chain, spec)
    K = args.horizon or horizon(pi, graph, args.eta_eval)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for dist in return_time_distributions(P, graph, K):
        _write(out / f"node{dist.node}.csv", dist.to_csv())
    return out, {"graph": args.graph, "chain": args.chain}, {"horizon": K}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retentropy",
        description="Patrol strategies that maximize the entropy of return times.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def graph_arg(p):
        p.add_argument("--graph", required=True,
                       help="graph JSON file, or ring[:n], grid[:RxC], complete[:n], sf_crime_map")
        p.add_argument("--eps", type=float, default=0.0, help="minimum probability on every edge")

    p = sub.add_parser("build", help="write one of the shipped graphs to a JSON file")
    p.add_argument("kind", help="ring[:n], grid[:RxC], complete[:n] or sf_crime_map")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("eval", help="evaluate every metric of a chain")
    graph_arg(p)
    p.add_argument("--chain", required=True)
    p.add_argument("--eta-eval", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("optimize", help="optimize a chain on a graph")
    graph_arg(p)
    p.add_argument("--objective", choices=["return-entropy", "entropy-rate", "min-kemeny"],
                   default="return-entropy")
    p.add_argument("--eta", type=float, default=0.1, help="truncation accuracy while optimizing")
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("intruder", help="capture probability curves against a rational intruder")
    graph_arg(p)
    p.add_argument("--chain", required=True, nargs="+")
    taus = p.add_mutually_exclusive_group()
    taus.add_argument("--tau-range", type=parse_tau_range, default=parse_tau_range("1..20"),
                      help="attack durations a..b, inclusive (default 1..20)")
    taus.add_argument("--tau", type=int, default=None, help="a single attack duration")
    p.add_argument("--delta", type=float, default=0.1, help="degree of impatience")
    p.add_argument("--plan-at", type=int, default=None, help="also write the attack plan at this tau")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_intruder)

    p = sub.add_parser("distributions", help="write return time distributions as CSV")
    graph_arg(p)
    p.add_argument("--chain", required=True)
    p.add_argument("--eta-eval", type=float, default=0.01)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_distributions)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        out, inputs, config = args.func(args)
    except (InputError, GraphError, IntruderError, MetricError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OptimizationError as exc:
        print(f"optimizer failed: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZER
    write_manifest(out, args, argv, inputs, config, started)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
