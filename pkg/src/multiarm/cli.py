"""Command-line interface: validate configs, run scenarios, run Monte Carlo
batches, and serve the teleoperation bridge.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import (
    ConfigParseError,
    content_hash,
    parse_scenario,
    read_scenario_document,
    shipped_scenario_path,
    validate_scenario,
)
from .sim import NumericalBlowupError, World, completion_time, run_monte_carlo

log = logging.getLogger("multiarm")


def resolve_config_path(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    shipped = shipped_scenario_path(name_or_path)
    if shipped.exists():
        return shipped
    raise FileNotFoundError(f"no scenario file or shipped scenario named {name_or_path!r}")


def _load_for_run(path: Path, overrides: dict):
    doc = read_scenario_document(path)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    config = parse_scenario(doc)
    problems = validate_scenario(config)
    return doc, config, problems


def cmd_validate(args) -> int:
    try:
        path = resolve_config_path(args.config)
        doc = read_scenario_document(path)
        config = parse_scenario(doc)
    except FileNotFoundError as exc:
        print(f"error: {exc}")
        return 1
    except ConfigParseError as exc:
        loc = f" (line {exc.line}, column {exc.column})" if exc.line else ""
        print(f"parse error{loc}: {exc}")
        return 1
    except (ValueError, KeyError) as exc:
        print(f"invalid config: {exc}")
        return 1
    problems = validate_scenario(config)
    if problems:
        print(f"INVALID: {len(problems)} violation(s)")
        for p in problems:
            print(f"  - {p}")
        return 1
    print(f"VALID: {config.name} ({config.n_agents} agents, {config.duration} s, "
          f"hash {content_hash(doc)[:12]})")
    return 0


def write_run_outputs(out_dir: Path, manifest: dict, trace, config) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    trace.to_csv(out_dir / "trace.csv")
    trace.timings_to_csv(out_dir / "timings.csv")
    summary = trace.summary()
    if config.reference.p_goal is not None:
        summary["completion_time"] = completion_time(
            trace.t, trace.centers(), config.reference.p_goal, config.completion_tol)
    summary["manifest"] = manifest
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=1, default=float) + "\n")
    return summary


def cmd_run(args) -> int:
    try:
        path = resolve_config_path(args.config)
        doc, config, problems = _load_for_run(path, {"duration": args.duration})
    except (FileNotFoundError, ConfigParseError, ValueError, KeyError) as exc:
        print(f"invalid config: {exc}")
        return 1
    if problems:
        print("invalid config:")
        for p in problems:
            print(f"  - {p}")
        return 1
    manifest = {
        "config": str(path),
        "name": config.name,
        "mode": args.mode,
        "seed": args.seed,
        "out": str(args.out),
        "hash": content_hash({"doc": doc, "mode": args.mode, "seed": args.seed}),
    }
    out_dir = Path(args.out) if args.out else Path("runs") / f"{config.name}-{args.mode}-{args.seed}"
    try:
        if args.teleop:
            from .bridge import PortInUseError, serve
            try:
                summary = serve(config, mode=args.mode, port=args.port,
                                realtime=not args.no_realtime, out_dir=out_dir,
                                manifest=manifest)
            except PortInUseError as exc:
                print(f"teleop bridge failed to start: {exc}")
                return 2
        else:
            trace = World(config, mode=args.mode).run()
            summary = write_run_outputs(out_dir, manifest, trace, config)
    except NumericalBlowupError as exc:
        print(f"runtime failure: {exc}")
        return 2
    print(f"run complete: {out_dir}")
    for key in ("E_p_final_mean", "E_theta_final_mean", "h_min_min", "leader_switches",
                "messages_total", "messages_state_total", "qp_time_mean_ms",
                "qp_time_max_ms", "control_time_mean_ms", "completion_time"):
        if key in summary:
            print(f"  {key}: {summary[key]}")
    return 0


def cmd_montecarlo(args) -> int:
    if args.trials < 1:
        print("error: --trials must be >= 1")
        return 1
    try:
        path = resolve_config_path(args.config)
        doc, config, problems = _load_for_run(path, {})
    except (FileNotFoundError, ConfigParseError, ValueError, KeyError) as exc:
        print(f"invalid config: {exc}")
        return 1
    if problems:
        print("invalid config:")
        for p in problems:
            print(f"  - {p}")
        return 1
    try:
        result = run_monte_carlo(config, n_trials=args.trials, seed=args.seed,
                                 mode=args.mode, workers=args.workers)
    except NumericalBlowupError as exc:
        print(f"runtime failure: {exc}")
        return 2
    out_dir = Path(args.out) if args.out else Path("runs") / f"{config.name}-mc-{args.seed}"
    out_dir.mkdir(parents=True, exist_ok=True)
    result["manifest"] = {
        "config": str(path), "mode": args.mode, "seed": args.seed,
        "trials": args.trials,
        "hash": content_hash({"doc": doc, "mode": args.mode, "seed": args.seed,
                              "trials": args.trials}),
    }
    (out_dir / "montecarlo.json").write_text(
        json.dumps(result, indent=1, default=float) + "\n")
    agg = result["aggregate"]

    def mean_range(key):
        a = agg[key]
        return f"{a['mean']:.4g}+-{a['range']:.2g}"

    print(f"monte carlo: {args.trials} trials, seed {args.seed}, mode {args.mode}")
    print(f"  safety pass      : {agg['safety_pass_rate'] * 100:.0f}%")
    print(f"  time/step (ms)   : {mean_range('control_time_mean_ms')}")
    print(f"  E_p              : {mean_range('E_p_final_mean')}")
    print(f"  E_theta          : {mean_range('E_theta_final_mean')}")
    if "completion_time" in agg:
        print(f"  completion median: {agg['completion_time']['median']:.3g} s")
    print(f"written: {out_dir / 'montecarlo.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multiarm",
        description="Multi-manipulator formation control lab with event-triggered "
                    "safety filtering")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="validate a scenario configuration")
    p_val.add_argument("config", help="path or shipped scenario name")
    p_val.set_defaults(func=cmd_validate)

    p_run = sub.add_parser("run", help="run a scenario and write trace/summary")
    p_run.add_argument("config")
    p_run.add_argument("--mode", choices=("event", "always-on"), default="event")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--duration", type=float, default=None,
                       help="override scenario duration (s)")
    p_run.add_argument("--teleop", action="store_true",
                       help="serve the teleoperation bridge during the run")
    p_run.add_argument("--port", type=int, default=8765)
    p_run.add_argument("--no-realtime", action="store_true",
                       help="run the teleop loop as fast as possible")
    p_run.set_defaults(func=cmd_run)

    p_mc = sub.add_parser("montecarlo", help="run a Monte Carlo batch")
    p_mc.add_argument("config")
    p_mc.add_argument("--trials", type=int, default=20)
    p_mc.add_argument("--seed", type=int, default=0)
    p_mc.add_argument("--mode", choices=("event", "always-on"), default="event")
    p_mc.add_argument("--out", default=None)
    p_mc.add_argument("--workers", type=int, default=None,
                      help="trial workers (default: MULTIARM_WORKERS or cpu count, max 4)")
    p_mc.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
