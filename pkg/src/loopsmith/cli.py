"""Command-line interface.

Subcommands:
  run          execute every tuning phase of a scenario and write reports
  orchestrate  compose once at a fixed trade-off weight and print the result
  sweep-alpha  evaluate one episode per trade-off grid point
  oracle-check compare the composer against its exhaustive oracle

Exit codes: 0 success, 2 invalid input (scenario or arguments),
3 no feasible composition.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .graph import GraphConstructionError, build_service_graph
from .harness import run_learning_loop, sweep_alpha, write_reports, write_sweep
from .scenario import ScenarioError, build_registry, bundled_scenario_path, load_scenario
from .search import InfeasibleCompositionError, astar_compose
from .selfcheck import run_equivalence_check

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loopsmith",
        description="Compose and tune closed control loops from registered services.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every tuning phase of a scenario")
    run.add_argument("scenario", help="scenario TOML path, or 'bundled'")
    run.add_argument("--out", default="out", help="report directory (default: out)")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument(
        "--timing",
        choices=("synthetic", "wallclock"),
        default=None,
        help="override the scenario timing mode",
    )
    run.add_argument("--quiet", action="store_true", help="suppress per-iteration progress")

    orchestrate = sub.add_parser("orchestrate", help="compose once at a fixed weight")
    orchestrate.add_argument("scenario", help="scenario TOML path, or 'bundled'")
    orchestrate.add_argument("--alpha", type=float, required=True, help="trade-off weight in [0.1, 0.9]")
    orchestrate.add_argument(
        "--dump-graph", action="store_true", help="include the full weighted graph in the output"
    )

    sweep = sub.add_parser("sweep-alpha", help="one episode per trade-off grid point")
    sweep.add_argument("scenario", help="scenario TOML path, or 'bundled'")
    sweep.add_argument("--grid", default="0.1:0.9:0.1", help="grid as start:stop:step (inclusive)")
    sweep.add_argument("--out", default=None, help="also write sweep.csv into this directory")
    sweep.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")

    oracle = sub.add_parser("oracle-check", help="randomized search-vs-oracle comparison")
    oracle.add_argument("--instances", type=int, default=200, help="number of random instances")
    oracle.add_argument("--seed", type=int, default=7, help="instance stream seed")
    oracle.add_argument("--max-services", type=int, default=4, help="services per kind cap")

    return parser


def _resolve_scenario(argument: str):
    path = bundled_scenario_path() if argument == "bundled" else Path(argument)
    return load_scenario(path)


def _parse_grid(spec: str) -> list[float]:
    try:
        start_s, stop_s, step_s = spec.split(":")
        start, stop, step = float(start_s), float(stop_s), float(step_s)
    except ValueError:
        raise ValueError(f"grid must be start:stop:step, got {spec!r}") from None
    if step <= 0.0 or stop < start:
        raise ValueError(f"grid must ascend with positive step, got {spec!r}")
    values = []
    k = 0
    while True:
        value = round(start + k * step, 12)
        if value > stop + 1e-12:
            break
        values.append(value)
        k += 1
    return values


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = _resolve_scenario(args.scenario)
    progress = None if args.quiet else lambda line: print(line, file=sys.stderr)
    result = run_learning_loop(scenario, seed=args.seed, timing_mode=args.timing, progress=progress)
    written = write_reports(result, args.out)
    final = result.records[-1]
    print(f"wrote {len(written)} report files to {args.out}")
    print(
        f"final phase: criterion={final.criterion.value} alpha={final.alpha:.2f} "
        f"services={','.join(final.service_ids)} value={final.criterion_value:.4f}"
    )
    return EXIT_OK


def _cmd_orchestrate(args: argparse.Namespace) -> int:
    scenario = _resolve_scenario(args.scenario)
    registry = build_registry(scenario)
    graph = build_service_graph(registry, args.alpha)
    composition = astar_compose(graph)
    payload = {"composition": composition.to_json_dict()}
    if args.dump_graph:
        payload["graph"] = graph.to_json_dict()
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    scenario = _resolve_scenario(args.scenario)
    grid = _parse_grid(args.grid)
    records = sweep_alpha(scenario, grid, seed=args.seed, jobs=args.jobs)
    for record in records:
        print(
            f"alpha={record.alpha:.2f} cost={record.composition_cost:.6f} "
            f"rms_tracking_error={record.rms_tracking_error:.4f} "
            f"mean_step_time_ms={record.mean_step_time_ms:.4f} "
            f"services={','.join(record.service_ids)}"
        )
    if args.out is not None:
        path = write_sweep(records, args.out)
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_oracle_check(args: argparse.Namespace) -> int:
    if args.instances < 1 or args.max_services < 1:
        raise ValueError("--instances and --max-services must be >= 1")
    outcome = run_equivalence_check(args.instances, args.seed, args.max_services)
    print(
        f"checked {outcome.instances} instances: {outcome.feasible} feasible, "
        f"{outcome.infeasible} infeasible, {len(outcome.mismatches)} mismatches"
    )
    for mismatch in outcome.mismatches:
        print(f"MISMATCH {mismatch}")
    return EXIT_OK if outcome.ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "orchestrate": _cmd_orchestrate,
        "sweep-alpha": _cmd_sweep,
        "oracle-check": _cmd_oracle_check,
    }
    try:
        return handlers[args.command](args)
    except (ScenarioError, GraphConstructionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InfeasibleCompositionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    raise SystemExit(main())
