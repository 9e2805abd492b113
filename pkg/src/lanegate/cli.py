"""Command-line front end.

Subcommands: ``run`` simulates one configured episode, ``batch`` runs the
randomized grid and writes metrics.csv plus records.jsonl, ``ablate``
repeats an episode with the hysteresis layer on and off, and ``report``
renders SVG figures from trace files.

Seed precedence, highest first: the ``--seed`` flag, the LANEGATE_SEED
environment variable, the seed in the config file.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Optional

from .config import ConfigError, load_batch, load_scenario
from .evaluation import run_batch
from .report import (
    format_metrics_table,
    plot_mode_comparison,
    plot_speed_profile,
    plot_trajectories,
    read_trace,
    write_metrics_csv,
    write_records_jsonl,
)
from .sim import run_episode

__all__ = ["main"]


def _resolve_seed(cli_seed: Optional[int], config_seed: int) -> int:
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("LANEGATE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"LANEGATE_SEED must be an integer, got {env!r}")
    return config_seed


def _summary_dict(summary) -> dict:
    out = dataclasses.asdict(summary)
    out["avg_speed"] = round(out["avg_speed"], 6)
    out["slack_mean"] = round(out["slack_mean"], 6)
    out["decide_ms_mean"] = round(out["decide_ms_mean"], 3)
    out["decide_ms_max"] = round(out["decide_ms_max"], 3)
    return out


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.config)
    seed = _resolve_seed(args.seed, scenario.seed)
    result = run_episode(
        scenario.geometry,
        scenario.vehicles,
        scenario.engine_params(),
        scenario.sim,
        seed=seed,
        record_trace=args.trace is not None,
    )
    if args.trace is not None:
        result.trace.write(args.trace)
    text = json.dumps(_summary_dict(result.summary), indent=2, sort_keys=True)
    if args.summary is not None:
        Path(args.summary).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def _cmd_batch(args: argparse.Namespace) -> int:
    cfg = load_batch(args.config)
    seed = _resolve_seed(args.seed, cfg.seed)
    cfg = dataclasses.replace(cfg, seed=seed)
    result = run_batch(cfg, workers=args.workers)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(result, out_dir / "metrics.csv")
    write_records_jsonl(result, out_dir / "records.jsonl")
    print(format_metrics_table(result))
    print(f"\nwrote {out_dir / 'metrics.csv'} and {out_dir / 'records.jsonl'}")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.config)
    seed = _resolve_seed(args.seed, scenario.seed)
    runs = {}
    out_dir = Path(args.out_dir) if args.out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    for label, enabled in (("hysteresis_on", True), ("hysteresis_off", False)):
        cfg = dataclasses.replace(
            scenario,
            planner=dataclasses.replace(scenario.planner, hysteresis=enabled),
        )
        result = run_episode(
            cfg.geometry,
            cfg.vehicles,
            cfg.engine_params(),
            cfg.sim,
            seed=seed,
            record_trace=out_dir is not None,
        )
        runs[label] = result
        if out_dir is not None:
            result.trace.write(out_dir / f"{label}.jsonl")
    comparison = {
        label: _summary_dict(result.summary) for label, result in runs.items()
    }
    on = runs["hysteresis_on"].summary.beta_switches
    off = runs["hysteresis_off"].summary.beta_switches
    comparison["switch_ratio"] = round(off / on, 3) if on else None
    print(json.dumps(comparison, indent=2, sort_keys=True))
    if out_dir is not None:
        plot_mode_comparison(
            [runs["hysteresis_on"].trace, runs["hysteresis_off"].trace],
            ["hysteresis on", "hysteresis off"],
            out_dir / "modes.svg",
        )
        print(f"wrote traces and modes.svg under {out_dir}", file=sys.stderr)
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = read_trace(args.trace)
    plot_trajectories(trace, out_dir / "trajectories.svg")
    plot_speed_profile(trace, out_dir / "speed.svg")
    written = ["trajectories.svg", "speed.svg"]
    if args.compare is not None:
        other = read_trace(args.compare)
        plot_mode_comparison(
            [trace, other], [Path(args.trace).stem, Path(args.compare).stem],
            out_dir / "modes.svg",
        )
        written.append("modes.svg")
    print(f"wrote {', '.join(written)} under {out_dir}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanegate",
        description="Maneuver-level highway planning: episodes, batches, reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one configured episode")
    p_run.add_argument("--config", required=True, help="scenario JSON file")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_run.add_argument("--trace", help="write a JSONL trace to this path")
    p_run.add_argument("--summary", help="write the summary JSON here instead of stdout")
    p_run.set_defaults(func=_cmd_run)

    p_batch = sub.add_parser("batch", help="run the randomized evaluation grid")
    p_batch.add_argument("--config", required=True, help="batch JSON file")
    p_batch.add_argument("--seed", type=int, help="override the config seed")
    p_batch.add_argument("--workers", type=int, help="process count (default from config)")
    p_batch.add_argument("--out-dir", default="out", help="where to write results")
    p_batch.set_defaults(func=_cmd_batch)

    p_ablate = sub.add_parser(
        "ablate", help="run one episode with and without the hysteresis layer"
    )
    p_ablate.add_argument("--config", required=True, help="scenario JSON file")
    p_ablate.add_argument("--seed", type=int, help="override the config seed")
    p_ablate.add_argument("--out-dir", help="write traces and a mode figure here")
    p_ablate.set_defaults(func=_cmd_ablate)

    p_report = sub.add_parser("report", help="render SVG figures from a trace")
    p_report.add_argument("--trace", required=True, help="episode trace JSONL")
    p_report.add_argument("--compare", help="second trace for a mode comparison")
    p_report.add_argument("--out-dir", default="figs", help="figure directory")
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
