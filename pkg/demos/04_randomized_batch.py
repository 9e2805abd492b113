"""Run a reduced randomized batch and print the metrics table.

Six families from the default grid (two-lane and three-lane cells), five
trials each, 20 s episodes.  Every trial seeds its own generator from the
master seed, the family index, and the trial index, so any single row can
be reproduced in isolation.  The pooled table, the per-trial records, and
the metrics CSV land next to this script.
"""
import pathlib

from lanegate.config import BatchConfig, ScenarioConfig, default_family_grid
from lanegate.evaluation import run_batch
from lanegate.report import format_metrics_table, write_metrics_csv, write_records_jsonl
from lanegate.sim import SimConfig

OUT = pathlib.Path(__file__).resolve().parent / "out"


def main():
    OUT.mkdir(exist_ok=True)
    cfg = BatchConfig(
        seed=3,
        trials_per_family=5,
        families=default_family_grid()[:6],
        base=ScenarioConfig(sim=SimConfig(duration=20.0)),
        workers=1,
    )
    result = run_batch(cfg)
    print(format_metrics_table(result))
    write_metrics_csv(result, OUT / "metrics.csv")
    write_records_jsonl(result, OUT / "records.jsonl")
    print(f"\nartifacts in {OUT}/: metrics.csv, records.jsonl")


if __name__ == "__main__":
    main()
