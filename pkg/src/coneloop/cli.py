"""Command-line interface.

Subcommands:
  run      closed-loop run, single process or one role of a distributed pair
  metrics  recompute a RunReport from a log file
  plot     render trajectory and per-frame plan figures from a log
  config   dump-defaults: print the packaged default configuration

Exit codes for `run`: 0 completed with zero strikes, 2 incomplete or struck,
1 on errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .bridge import BridgeError, EndpointConfig
from .config import ConfigError, dump_defaults, load_scenario
from .harness import RunReport, ScenarioInvalid, metrics, run_distributed, run_local
from .runlog import read_log


def _parse_hostport(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {value!r}")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coneloop")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="drive the closed loop")
    run_p.add_argument("--scenario", action="append", default=[], metavar="FILE",
                       help="scenario file(s), merged left to right over defaults")
    run_p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run_p.add_argument("--log", default=None, metavar="PATH", help="write the run log here")
    run_p.add_argument("--fail-fast", action="store_true",
                       help="stop at the first cone strike")
    run_p.add_argument("--role", choices=["sim", "autonomy"], default=None,
                       help="run one side of a distributed pair")
    run_p.add_argument("--listen", type=_parse_hostport, default=None, metavar="HOST:PORT")
    run_p.add_argument("--connect", type=_parse_hostport, default=None, metavar="HOST:PORT")

    metrics_p = sub.add_parser("metrics", help="recompute metrics from a log")
    metrics_p.add_argument("--log", required=True, metavar="PATH")
    metrics_p.add_argument("--scenario", action="append", default=[], metavar="FILE")

    plot_p = sub.add_parser("plot", help="render figures from a log")
    plot_p.add_argument("--log", required=True, metavar="PATH")
    plot_p.add_argument("--out", required=True, metavar="DIR")
    plot_p.add_argument("--scenario", action="append", default=[], metavar="FILE")

    config_p = sub.add_parser("config", help="configuration utilities")
    config_p.add_argument("action", choices=["dump-defaults"])

    return parser


def _print_report(report: RunReport) -> None:
    print(report.to_json().decode("utf-8"))


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario, seed=args.seed)
    if args.role is None:
        report, _ = run_local(scenario, log_path=args.log, fail_fast=args.fail_fast)
        _print_report(report)
        return 0 if report.completed and report.cones_struck == 0 else 2

    if (args.listen is None) == (args.connect is None):
        print("distributed runs need exactly one of --listen or --connect", file=sys.stderr)
        return 1
    if args.listen is not None:
        host, port = args.listen
        endpoint = EndpointConfig("listener", host, port, node_name=args.role)
    else:
        host, port = args.connect
        endpoint = EndpointConfig("connector", host, port, node_name=args.role)

    try:
        report, _ = run_distributed(
            args.role, scenario, config=endpoint, log_path=args.log,
            fail_fast=args.fail_fast,
        )
    except BridgeError as exc:
        # Partial log (if any) was already flushed by the runner.
        print(f"bridge error: {exc}", file=sys.stderr)
        return 2
    _print_report(report)
    if args.role == "autonomy":
        return 0 if report.completed else 2
    return 0 if report.completed and report.cones_struck == 0 else 2


def _cmd_metrics(args) -> int:
    scenario = load_scenario(args.scenario)
    records = read_log(args.log)
    report = metrics(
        records,
        scenario.course,
        wheelbase_m=scenario.chassis.wheelbase_m,
        track_m=scenario.chassis.track_m,
    )
    _print_report(report)
    return 0


def _cmd_plot(args) -> int:
    from .plotting import plot

    scenario = load_scenario(args.scenario)
    records = read_log(args.log)
    written = plot(records, scenario.course, args.out)
    for path in written:
        print(path)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "metrics":
            return _cmd_metrics(args)
        if args.command == "plot":
            return _cmd_plot(args)
        if args.command == "config":
            print(dump_defaults(), end="")
            return 0
        raise AssertionError(f"unhandled command {args.command!r}")
    except (ConfigError, ScenarioInvalid, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
