"""Result serialization and figures.

``metrics.csv`` carries only quantities that are deterministic functions
of the batch configuration (counts, rates, speeds, slacks), so two runs of
the same batch produce byte-identical files regardless of worker count.
Wall-clock solve latencies live in ``records.jsonl`` instead, one line per
trial.  Figures are rendered to SVG from episode traces.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence, Union

from .evaluation import BatchResult, Metrics
from .sim import EpisodeTrace

__all__ = [
    "write_metrics_csv",
    "write_records_jsonl",
    "format_metrics_table",
    "read_trace",
    "plot_trajectories",
    "plot_speed_profile",
    "plot_mode_comparison",
]

_CSV_COLUMNS = [
    "family",
    "lanes",
    "sv_count",
    "episodes",
    "failed",
    "collisions",
    "collision_rate",
    "decisions",
    "nominal",
    "relaxed",
    "fallback",
    "nominal_rate",
    "relaxed_rate",
    "fallback_rate",
    "beta_switches",
    "avg_speed",
    "slack_mean",
]


def _metrics_row(
    name: str, lanes: str, sv_count: str, failed: int, m: Metrics
) -> dict[str, str]:
    return {
        "family": name,
        "lanes": lanes,
        "sv_count": sv_count,
        "episodes": str(m.episodes),
        "failed": str(failed),
        "collisions": str(m.collisions),
        "collision_rate": f"{m.collision_rate:.6f}",
        "decisions": str(m.decisions),
        "nominal": str(m.nominal),
        "relaxed": str(m.relaxed),
        "fallback": str(m.fallback),
        "nominal_rate": f"{m.nominal_rate:.6f}",
        "relaxed_rate": f"{m.relaxed_rate:.6f}",
        "fallback_rate": f"{m.fallback_rate:.6f}",
        "beta_switches": f"{m.beta_switches:.3f}",
        "avg_speed": f"{m.avg_speed:.4f}",
        "slack_mean": f"{m.slack_mean:.5f}",
    }


def _result_rows(result: BatchResult) -> list[dict[str, str]]:
    rows = []
    for family in result.families:
        failed = sum(
            1 for r in result.records if r.family == family.name and r.error is not None
        )
        rows.append(
            _metrics_row(
                family.name,
                str(family.lane_count),
                str(family.sv_count),
                failed,
                result.per_family[family.name],
            )
        )
    total_failed = sum(1 for r in result.records if r.error is not None)
    rows.append(_metrics_row("all", "", "", total_failed, result.overall))
    return rows


def write_metrics_csv(result: BatchResult, path: Union[str, Path]) -> None:
    """One row per family plus a pooled "all" row; stable order and format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in _result_rows(result):
            writer.writerow(row)


def write_records_jsonl(result: BatchResult, path: Union[str, Path]) -> None:
    """Per-trial outcomes, including solve latencies and failures."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in result.records:
            row: dict = {"family": rec.family, "trial": rec.trial, "seed": rec.seed}
            if rec.error is not None:
                row["error"] = rec.error
            else:
                s = rec.summary
                row.update(
                    {
                        "collided": s.collided_ev,
                        "decisions": s.decisions,
                        "nominal": s.layer_counts["nominal"],
                        "relaxed": s.layer_counts["relaxed"],
                        "fallback": s.layer_counts["fallback"],
                        "beta_switches": s.beta_switches,
                        "lane_changes": s.lane_changes,
                        "avg_speed": round(s.avg_speed, 6),
                        "slack_mean": round(s.slack_mean, 6),
                        "decide_ms_mean": round(s.decide_ms_mean, 3),
                        "decide_ms_max": round(s.decide_ms_max, 3),
                    }
                )
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def format_metrics_table(result: BatchResult) -> str:
    """Human-readable fixed-width table for terminal output."""
    rows = _result_rows(result)
    cols = [
        "family",
        "episodes",
        "collision_rate",
        "nominal_rate",
        "relaxed_rate",
        "fallback_rate",
        "avg_speed",
    ]
    widths = {c: max(len(c), max(len(r[c]) for r in rows)) for c in cols}
    lines = ["  ".join(c.ljust(widths[c]) for c in cols)]
    for row in rows:
        lines.append("  ".join(row[c].ljust(widths[c]) for c in cols))
    return "\n".join(lines)


def read_trace(path: Union[str, Path]) -> EpisodeTrace:
    """Load a JSONL episode trace written by the simulator."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"empty trace file: {path}")
    header = json.loads(lines[0])
    if header.get("schema") != "lanegate-trace/1":
        raise ValueError(f"not a recognized trace file: {path}")
    records = [json.loads(line) for line in lines[1:] if line.strip()]
    return EpisodeTrace(header=header, records=records)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "lanegate"
    import matplotlib.pyplot as plt

    return plt


def _vehicle_series(trace: EpisodeTrace) -> tuple[list[float], dict[str, dict]]:
    times: list[float] = []
    series: dict[str, dict] = {
        vid: {"x": [], "y": [], "v": []} for vid in trace.header["vehicles"]
    }
    for rec in trace.by_type("state"):
        times.append(rec["t"])
        for veh in rec["vehicles"]:
            entry = series[veh["id"]]
            entry["x"].append(veh["x"])
            entry["y"].append(veh["y"])
            entry["v"].append(veh["v"])
    return times, series


def plot_trajectories(trace: EpisodeTrace, out_path: Union[str, Path]) -> None:
    """Longitudinal and lateral position against time, ego emphasized."""
    plt = _pyplot()
    times, series = _vehicle_series(trace)
    ev_id = trace.header["ev"]
    fig, (ax_x, ax_y) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for vid, entry in series.items():
        if vid == ev_id:
            continue
        ax_x.plot(times, entry["x"], lw=0.9, color="0.55")
        ax_y.plot(times, entry["y"], lw=0.9, color="0.55")
    ax_x.plot(times, series[ev_id]["x"], lw=2.0, color="C3", label="ego")
    ax_y.plot(times, series[ev_id]["y"], lw=2.0, color="C3", label="ego")
    ax_x.set_ylabel("x [m]")
    ax_y.set_ylabel("y [m]")
    ax_y.set_xlabel("t [s]")
    ax_x.legend(loc="upper left")
    ax_x.set_title("trajectories")
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)


def _corrective_spans(trace: EpisodeTrace) -> list[tuple[float, float]]:
    spans = []
    start: Optional[float] = None
    for rec in trace.by_type("decision"):
        active = bool(rec.get("corrective"))
        if active and start is None:
            start = rec["t"]
        elif not active and start is not None:
            spans.append((start, rec["t"]))
            start = None
    if start is not None:
        spans.append((start, trace.header["duration"]))
    return spans


def plot_speed_profile(trace: EpisodeTrace, out_path: Union[str, Path]) -> None:
    """Ego speed and longitudinal mode; corrective-mode intervals shaded."""
    plt = _pyplot()
    times, series = _vehicle_series(trace)
    ev_id = trace.header["ev"]
    decisions = trace.by_type("decision")
    fig, (ax_v, ax_m) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for vid, entry in series.items():
        if vid != ev_id:
            ax_v.plot(times, entry["v"], lw=0.8, color="0.6")
    ax_v.plot(times, series[ev_id]["v"], lw=2.0, color="C0", label="ego")
    for lo, hi in _corrective_spans(trace):
        ax_v.axvspan(lo, hi, color="C1", alpha=0.2, lw=0)
        ax_m.axvspan(lo, hi, color="C1", alpha=0.2, lw=0)
    ax_m.step(
        [d["t"] for d in decisions],
        [d["ev_mode"] for d in decisions],
        where="post",
        color="C2",
    )
    ax_v.set_ylabel("v [m/s]")
    ax_v.legend(loc="best")
    ax_m.set_ylabel("mode")
    ax_m.set_yticks([-1, 0, 1])
    ax_m.set_xlabel("t [s]")
    ax_v.set_title("ego speed (corrective intervals shaded)")
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)


def plot_mode_comparison(
    traces: Sequence[EpisodeTrace],
    labels: Sequence[str],
    out_path: Union[str, Path],
) -> None:
    """Stacked longitudinal-mode timelines, one panel per trace."""
    plt = _pyplot()
    n = len(traces)
    fig, axes = plt.subplots(n, 1, figsize=(8, 2.2 * n), sharex=True, squeeze=False)
    for ax, trace, label in zip(axes[:, 0], traces, labels):
        decisions = trace.by_type("decision")
        ts = [d["t"] for d in decisions]
        modes = [d["ev_mode"] for d in decisions]
        switches = sum(1 for d in decisions if d["action"][1] != 0)
        ax.step(ts, modes, where="post", color="C0")
        ax.set_yticks([-1, 0, 1])
        ax.set_ylabel("mode")
        ax.set_title(f"{label} ({switches} mode switches)", fontsize=10)
    axes[-1, 0].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
