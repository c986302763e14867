"""Command-line frontend over scenario files.

    condflow run <scenario.json> [--out DIR] [--threads N]
    condflow trace <scenario.json> --point 0.5,0.25 --tmax 1.0
                   [--samples N] [--path FILE] [--out DIR]
    condflow check <scenario.json>

The default tolerance profile comes from the CONDFLOW_PROFILE environment
variable (fast, default, or strict). Exit codes: 0 success, 1 task failure,
2 scenario parse error, 3 scenario validation error.
"""
from __future__ import annotations

import argparse
import sys

from .errors import ScenarioError
from .scenario import load_scenario, run_scenario, trace_once


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condflow",
        description="reconstruct and verify conductivities driven by scenario files",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute every task in a scenario")
    run.add_argument("scenario", help="path to a scenario JSON file")
    run.add_argument("--out", default=".", help="directory for summary and exports")
    run.add_argument("--threads", type=int, default=1,
                     help="worker threads for grid reconstruction")

    trace = sub.add_parser("trace", help="trace one trajectory of the scenario's field")
    trace.add_argument("scenario", help="path to a scenario JSON file")
    trace.add_argument("--point", required=True,
                       help="start point, comma separated: 0.5,0.25")
    trace.add_argument("--tmax", type=float, required=True,
                       help="signed integration time")
    trace.add_argument("--samples", type=int, default=32,
                       help="number of output intervals")
    trace.add_argument("--path", default="trace.txt", help="output table name")
    trace.add_argument("--out", default=".", help="directory for the table")

    check = sub.add_parser("check", help="parse and validate a scenario, run nothing")
    check.add_argument("scenario", help="path to a scenario JSON file")
    return parser


def _parse_point(text: str):
    try:
        return [float(part) for part in text.split(",")]
    except ValueError:
        raise ScenarioError(f"cannot parse point {text!r}; expected 0.5,0.25") from None


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
        if args.command == "check":
            print(f"scenario {scenario.name} valid: {len(scenario.tasks)} tasks")
            return 0
        if args.command == "trace":
            result = trace_once(
                scenario,
                _parse_point(args.point),
                args.tmax,
                samples=args.samples,
                path=args.path,
                out_dir=args.out,
            )
        else:
            if args.threads < 1:
                raise ScenarioError("--threads must be at least 1")
            result = run_scenario(scenario, out_dir=args.out, threads=args.threads)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    sys.stdout.write(result.summary)
    if result.failure is not None:
        print(f"error: {result.failure}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
