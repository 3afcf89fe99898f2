"""Command-line front end: run, sweep, and validate scenarios.

Exit codes: 0 success, 1 scenario validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import os
import sys

from .scenario import (
    ScenarioError,
    apply_override,
    coerce_value,
    load_scenario,
    parse_scenario,
)
from .sim import run as run_scenario
from .sim import summarize, write_metrics_csv

NS_PER_SEC = 1_000_000_000


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aqmlab",
        description="Packet-level dual-queue AQM laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario and write metrics")
    run_p.add_argument("--scenario", required=True, help="scenario TOML file")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--seed", type=int, help="override the scenario seed")
    run_p.add_argument(
        "--duration", type=float, help="override the duration, in seconds"
    )

    sweep_p = sub.add_parser("sweep", help="run the scenario once per value")
    sweep_p.add_argument("--scenario", required=True)
    sweep_p.add_argument("--out", required=True)
    sweep_p.add_argument(
        "--param", required=True, help="dotted scenario key, e.g. aqm.lge"
    )
    sweep_p.add_argument(
        "--values", required=True, help="comma-separated values for the key"
    )

    val_p = sub.add_parser("validate", help="check a scenario without running")
    val_p.add_argument("--scenario", required=True)
    return parser


def _write_outputs(result, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_metrics_csv(result.records, os.path.join(out_dir, "metrics.csv"))
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(summarize(result).to_text())


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    if args.duration is not None:
        if args.duration <= 0:
            raise ScenarioError(["--duration: must be positive"])
        scenario = dataclasses.replace(
            scenario, duration=round(args.duration * NS_PER_SEC)
        )
    result = run_scenario(scenario)
    _write_outputs(result, args.out)
    print(f"wrote {os.path.join(args.out, 'metrics.csv')}")
    return 0


def _cmd_sweep(args) -> int:
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    with open(args.scenario, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError([f"TOML syntax: {exc}"]) from exc
    values = [v for v in args.values.split(",") if v != ""]
    if not values:
        raise ScenarioError(["--values: no values given"])
    for text in values:
        variant = copy.deepcopy(doc)
        apply_override(variant, args.param, coerce_value(text))
        scenario = parse_scenario(variant)
        result = run_scenario(scenario)
        _write_outputs(result, os.path.join(args.out, f"{args.param}={text}"))
    print(f"swept {args.param} over {len(values)} values under {args.out}")
    return 0


def _cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    n = scenario.flows.setup.n_l + scenario.flows.setup.n_c
    print(
        f"scenario OK: {scenario.duration / NS_PER_SEC:g} s, {n} flow(s), "
        f"{len(scenario.link.segments)} link segment(s), "
        f"native {scenario.aqm.native_kind}, vq {scenario.aqm.vq_mode.value}"
    )
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_validate(args)
    except ScenarioError as exc:
        for line in exc.errors:
            print(f"scenario error: {line}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
