import argparse
import json
import logging
import sys
from pathlib import Path

from adversary import replay_impossibility_demo
from batch import run_batch
from commons import InputError
from graphs import (
    GraphSpec,
    format_graph,
    generate_graph,
    is_graph_quotient_isomorphic,
    quotient_graph,
    read_graph,
    write_graph,
)
from harness import Feasibility, Verdict, check_dispersion, check_trace, feasibility_guard, load_config, run_experiment

logger = logging.getLogger(__name__)


def _verdict_json(verdict: Verdict) -> str:
    return json.dumps(
        {
            "dispersed": verdict.dispersed,
            "violating_nodes": list(verdict.violating_nodes),
            "unsettled": list(verdict.unsettled),
            "rounds_used": verdict.rounds_used,
            "invariants": verdict.invariants,
            "timed_out": verdict.timed_out,
        },
        sort_keys=True,
    )


def run_command(args: argparse.Namespace) -> int:
    report = run_experiment(load_config(args.config), args.trace)
    print(_verdict_json(report.verdict))
    print(f"trace: {report.trace_path}")
    return 0 if report.verdict.dispersed else 1


def batch_command(args: argparse.Namespace) -> int:
    results = run_batch(args.directory, args.workers)
    for result in results:
        status = "dispersed" if result.dispersed else (result.error or "not dispersed")
        print(f"{result.config.name}\t{result.rounds}\t{status}")
    return 0 if results and all(result.dispersed for result in results) else 1


def check_command(args: argparse.Namespace) -> int:
    verdict = check_trace(args.trace, args.n)
    print(_verdict_json(verdict))
    return 0 if verdict.dispersed else 1


def guard_command(args: argparse.Namespace) -> int:
    feasibility = feasibility_guard(args.k, args.n, args.f)
    print(feasibility)
    return 0 if feasibility is Feasibility.FEASIBLE else 1


def demo_command(args: argparse.Namespace) -> int:
    """Exits 0 when the replay witness does break dispersion, as it should."""
    demo = replay_impossibility_demo(args.k, args.n, args.f)
    verdict = check_dispersion(demo.replay.trace.records, args.k, args.n, args.f)
    print(_verdict_json(verdict))
    if args.trace is not None:
        demo.replay.trace.write(args.trace)
    return 1 if verdict.dispersed else 0


def graph_command(args: argparse.Namespace) -> int:
    match args.graph_command:
        case "gen":
            graph = generate_graph(GraphSpec.parse(args.spec, args.seed))
            if args.out is not None:
                write_graph(graph, args.out)
            else:
                print(format_graph(graph), end="")
        case "quotient":
            quotient = quotient_graph(read_graph(args.file))
            for index, members in enumerate(quotient.classes):
                print(f"# class {index}: {' '.join(str(node) for node in sorted(members))}")
            print(format_graph(quotient.as_graph()), end="")
        case "check-iso":
            rigid = is_graph_quotient_isomorphic(read_graph(args.file))
            print("isomorphic" if rigid else "not isomorphic")
            return 0 if rigid else 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="byzdisp", description="Byzantine dispersion simulator")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run one experiment config")
    run.add_argument("config", type=Path)
    run.add_argument("--trace", type=Path, default=None, help="where to write the trace")
    run.set_defaults(handler=run_command)

    batch = commands.add_parser("batch", help="run every config in a directory")
    batch.add_argument("directory", type=Path)
    batch.add_argument("--workers", type=int, default=None)
    batch.set_defaults(handler=batch_command)

    check = commands.add_parser("check", help="judge a trace file")
    check.add_argument("trace", type=Path)
    check.add_argument("--n", type=int, default=None, help="node count, if the trace has no summary")
    check.set_defaults(handler=check_command)

    for name, handler, help_text in (
        ("guard", guard_command, "is dispersion possible for k robots, n nodes, f Byzantine"),
        ("demo", demo_command, "replay the witness that breaks an infeasible configuration"),
    ):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("k", type=int)
        sub.add_argument("n", type=int)
        sub.add_argument("f", type=int)
        if name == "demo":
            sub.add_argument("--trace", type=Path, default=None)
        sub.set_defaults(handler=handler)

    graph = commands.add_parser("graph", help="graph utilities")
    graph_commands = graph.add_subparsers(dest="graph_command", required=True)
    gen = graph_commands.add_parser("gen", help="generate a graph from family:size[:consistent]")
    gen.add_argument("spec")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=Path, default=None)
    for name in ("quotient", "check-iso"):
        sub = graph_commands.add_parser(name)
        sub.add_argument("file", type=Path)
    graph.set_defaults(handler=graph_command)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except InputError as e:
        logger.error(f"{args.command} failed: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
