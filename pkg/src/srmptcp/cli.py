"""Command line: ``srmptcp run`` and ``srmptcp summarize``."""

from __future__ import annotations

import argparse
import json
import sys
import time

from srmptcp.runner import RunSummary, run, summarize_dir
from srmptcp.scenario import BUILTIN_NAMES, ConfigError, builtin_config, builtin_scenario, load_config
from srmptcp.sim import SimulationError


def _print_summary(summary: RunSummary, out=sys.stdout) -> None:
    print(f"total bytes delivered: {summary.total_bytes}", file=out)
    print(f"handovers: {summary.handover_count}", file=out)
    if summary.max_delivery_gap_s is not None:
        print(f"max delivery gap: {summary.max_delivery_gap_s:.3f} s", file=out)
    for p in summary.phases:
        per = ", ".join(f"sf{sid}={mbps:.2f}" for sid, mbps in sorted(p.subflow_mbps.items()))
        print(
            f"phase [{p.start_s:g}, {p.end_s:g}) s, mean over [{p.window_start_s:g}, {p.end_s:g}): "
            f"total {p.aggregate_mbps:.2f} Mbps ({per})",
            file=out,
        )


def cmd_run(args: argparse.Namespace) -> int:
    if args.builtin:
        config = builtin_scenario(args.builtin)
    else:
        config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    t0 = time.perf_counter()
    result = run(config, args.out)
    elapsed = time.perf_counter() - t0
    print(f"wrote {args.out}/metrics.csv, events.csv, summary.json ({elapsed:.1f} s wall)")
    _print_summary(result.summary)
    return 0


def cmd_summarize(args: argparse.Namespace) -> int:
    summary = summarize_dir(args.input)
    if args.json:
        print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    else:
        _print_summary(summary)
    return 0


def cmd_config(args: argparse.Namespace) -> int:
    print(json.dumps(builtin_config(args.name), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srmptcp", description="MPTCP over a single shared vehicular radio")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write metrics")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="scenario JSON file")
    src.add_argument("--builtin", choices=BUILTIN_NAMES, help="built-in scenario")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("summarize", help="per-phase summary of a finished run")
    p.add_argument("--in", dest="input", required=True, help="run output directory")
    p.add_argument("--json", action="store_true", help="print JSON instead of text")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("config", help="print a built-in scenario as JSON")
    p.add_argument("name", choices=BUILTIN_NAMES)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
