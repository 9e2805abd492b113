"""Randomized evaluation: scenario sampling, batch runs, aggregation.

Each (family, trial) pair owns a seed spawned from the batch master seed
through ``numpy.random.SeedSequence([master, family_idx, trial_idx, k])``,
so results are independent of execution order and of how many worker
processes run them.  Aggregation keeps integer counts; rates are derived
at presentation time, which keeps the layer shares summing to exactly one.
"""

from __future__ import annotations

import dataclasses
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import BatchConfig, ConfigError, Family, ScenarioConfig
from .hmdp import LaneGeometry
from .safety import idm_gap
from .sim import EpisodeSummary, VehicleInit, run_episode

__all__ = [
    "Metrics",
    "TrialRecord",
    "BatchResult",
    "sample_scenario",
    "trial_seed_sequence",
    "run_trial",
    "run_batch",
    "aggregate_metrics",
]

_PLACEMENT_ATTEMPTS = 1000
_ROAD_LENGTH = 500.0  # [m] initial placement window
_MIN_SEPARATION_FACTOR = 1.5  # of vehicle length, same-lane center distance


@dataclass(frozen=True)
class Metrics:
    """Pooled counters over a set of episodes, plus derived rates."""

    episodes: int
    collisions: int  # episodes where the ego hit something
    decisions: int
    nominal: int
    relaxed: int
    fallback: int
    avg_speed: float  # [m/s] mean of per-episode ego means
    slack_mean: float  # [m] mean of per-episode slack means
    beta_switches: float  # mean longitudinal-mode switches per episode
    decide_ms_mean: float
    decide_ms_max: float

    def __post_init__(self) -> None:
        if self.nominal + self.relaxed + self.fallback != self.decisions:
            raise ValueError("layer counts must partition the decision count")

    @property
    def collision_rate(self) -> float:
        return self.collisions / self.episodes if self.episodes else 0.0

    @property
    def nominal_rate(self) -> float:
        return self.nominal / self.decisions if self.decisions else 0.0

    @property
    def relaxed_rate(self) -> float:
        return self.relaxed / self.decisions if self.decisions else 0.0

    @property
    def fallback_rate(self) -> float:
        return self.fallback / self.decisions if self.decisions else 0.0


@dataclass(frozen=True)
class TrialRecord:
    """One episode's identity and outcome inside a batch."""

    family: str
    trial: int
    seed: int
    summary: Optional[EpisodeSummary]
    error: Optional[str] = None


@dataclass(frozen=True)
class BatchResult:
    families: tuple[Family, ...]
    records: tuple[TrialRecord, ...]
    per_family: dict[str, Metrics]
    overall: Metrics

    def family_records(self, name: str) -> list[TrialRecord]:
        return [r for r in self.records if r.family == name]


def trial_seed_sequence(master_seed: int, family_idx: int, trial_idx: int, stream: int):
    """The seed for one trial's stream: 0 samples the scenario, 1 runs it."""
    return np.random.SeedSequence([master_seed, family_idx, trial_idx, stream])


def sample_scenario(
    family: Family,
    base: ScenarioConfig,
    master_seed: int,
    family_idx: int,
    trial_idx: int,
) -> ScenarioConfig:
    """Draw one random episode for a family.

    Positions are uniform over the placement window, lanes uniform, initial
    and desired speeds uniform over the family's range.  A draw is rejected
    when any two same-lane vehicles start closer than 1.5 vehicle lengths,
    or closer than the trailing vehicle's IDM desired gap; traffic starts
    in quasi-equilibrium rather than mid-emergency, so layer statistics
    measure the controller, not the dice.  The whole placement is redrawn
    on rejection, up to a fixed attempt budget.
    """
    rng = np.random.default_rng(
        trial_seed_sequence(master_seed, family_idx, trial_idx, 0)
    )
    n = family.sv_count + 1  # surround vehicles plus the ego
    min_gap = _MIN_SEPARATION_FACTOR * base.sim.vehicle_length
    for _ in range(_PLACEMENT_ATTEMPTS):
        lanes = rng.integers(1, family.lane_count + 1, size=n)
        xs = rng.uniform(0.0, _ROAD_LENGTH, size=n)
        vs = rng.uniform(family.speed_min, family.speed_max, size=n)
        desired = rng.uniform(family.speed_min, family.speed_max, size=n)
        ok = True
        for lane in range(1, family.lane_count + 1):
            idx = np.flatnonzero(lanes == lane)
            if idx.size < 2:
                continue
            order = idx[np.argsort(xs[idx])]
            for rear, front in zip(order[:-1], order[1:]):
                gap = xs[front] - xs[rear]
                if gap < min_gap or gap < idm_gap(
                    float(vs[rear]), float(vs[front]), base.idm
                ):
                    ok = False
                    break
            if not ok:
                break
        if not ok:
            continue
        vehicles = [
            VehicleInit(
                vehicle_id="ev",
                lane=int(lanes[0]),
                x=float(xs[0]),
                v=float(vs[0]),
                kind="ev",
            )
        ]
        for i in range(1, n):
            vehicles.append(
                VehicleInit(
                    vehicle_id=f"sv{i:02d}",
                    lane=int(lanes[i]),
                    x=float(xs[i]),
                    v=float(vs[i]),
                    desired_speed=float(desired[i]),
                    p_lane_change=family.p_lane_change,
                )
            )
        return dataclasses.replace(
            base,
            geometry=LaneGeometry(
                lane_count=family.lane_count, lane_width=base.geometry.lane_width
            ),
            weights=dataclasses.replace(base.weights, v_ref=family.v_ref),
            vehicles=tuple(vehicles),
        )
    raise ConfigError(
        f"could not place {n} vehicles in family '{family.name}' within "
        f"{_PLACEMENT_ATTEMPTS} attempts"
    )


def run_trial(
    base: ScenarioConfig,
    family: Family,
    master_seed: int,
    family_idx: int,
    trial_idx: int,
) -> TrialRecord:
    """Sample and simulate one trial; failures become records, not crashes."""
    episode_seed = int(
        trial_seed_sequence(master_seed, family_idx, trial_idx, 1).generate_state(1)[0]
    )
    try:
        scenario = sample_scenario(family, base, master_seed, family_idx, trial_idx)
        result = run_episode(
            scenario.geometry,
            scenario.vehicles,
            scenario.engine_params(),
            scenario.sim,
            seed=episode_seed,
            record_trace=False,
        )
        return TrialRecord(
            family=family.name, trial=trial_idx, seed=episode_seed, summary=result.summary
        )
    except Exception as exc:  # noqa: BLE001 - one bad trial must not sink the batch
        return TrialRecord(
            family=family.name,
            trial=trial_idx,
            seed=episode_seed,
            summary=None,
            error=f"{type(exc).__name__}: {exc}",
        )


def _run_trial_task(args) -> TrialRecord:
    return run_trial(*args)


def aggregate_metrics(summaries: Sequence[EpisodeSummary]) -> Metrics:
    """Pool episode summaries into one metrics row."""
    if not summaries:
        return Metrics(0, 0, 0, 0, 0, 0, 0.0, 0.0, 0.0, 0.0, 0.0)
    return Metrics(
        episodes=len(summaries),
        collisions=sum(1 for s in summaries if s.collided_ev),
        decisions=sum(s.decisions for s in summaries),
        nominal=sum(s.layer_counts["nominal"] for s in summaries),
        relaxed=sum(s.layer_counts["relaxed"] for s in summaries),
        fallback=sum(s.layer_counts["fallback"] for s in summaries),
        avg_speed=float(np.mean([s.avg_speed for s in summaries])),
        slack_mean=float(np.mean([s.slack_mean for s in summaries])),
        beta_switches=float(np.mean([s.beta_switches for s in summaries])),
        decide_ms_mean=float(np.mean([s.decide_ms_mean for s in summaries])),
        decide_ms_max=float(np.max([s.decide_ms_max for s in summaries])),
    )


def run_batch(cfg: BatchConfig, workers: Optional[int] = None) -> BatchResult:
    """Run the whole grid and aggregate.

    The task list is fixed up front; with more than one worker the tasks
    are farmed to a process pool and the results re-sorted by (family,
    trial), so the output is identical for any worker count.  Trials that
    raise are excluded from the aggregates with a warning.
    """
    workers = cfg.workers if workers is None else workers
    if workers < 1:
        raise ConfigError("workers must be positive")
    tasks = [
        (cfg.base, family, cfg.seed, family_idx, trial_idx)
        for family_idx, family in enumerate(cfg.families)
        for trial_idx in range(cfg.trials_per_family)
    ]
    if workers == 1:
        records = [_run_trial_task(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_trial_task, tasks, chunksize=4))
    order = {family.name: i for i, family in enumerate(cfg.families)}
    records.sort(key=lambda r: (order[r.family], r.trial))

    failures = [r for r in records if r.error is not None]
    if failures:
        warnings.warn(
            f"{len(failures)} of {len(records)} trials failed and were excluded "
            f"(first: {failures[0].family}#{failures[0].trial}: {failures[0].error})",
            stacklevel=2,
        )
    per_family = {}
    for family in cfg.families:
        good = [r.summary for r in records if r.family == family.name and r.summary]
        per_family[family.name] = aggregate_metrics(good)
    overall = aggregate_metrics([r.summary for r in records if r.summary])
    return BatchResult(
        families=cfg.families,
        records=tuple(records),
        per_family=per_family,
        overall=overall,
    )
