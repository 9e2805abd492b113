"""Closed-loop highway simulation with a two-rate architecture.

The decision layer runs every ``dt`` seconds (the planner period); a
low-level executor samples the committed motion at a finer substep.  The
longitudinal executor evaluates the same clamped constant-acceleration
solution the planner uses, anchored at the decision instant, so the state
reached at the end of a period is bit-identical to the planner's one-step
prediction.  Lateral moves follow a half-cosine profile between lane
centers and latch the vehicle until the profile completes.

Surrounding vehicles are either policy-driven (gap-keeping plus seeded
random lane changes with gap acceptance) or scripted speed trackers.  All
randomness flows through one ``numpy`` generator seeded per episode, and
vehicles are processed in sorted id order, so an episode is a pure
function of its inputs.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .hmdp import (
    KEEP,
    Action,
    KinematicParams,
    KinematicState,
    LaneGeometry,
    ManeuverState,
    feasible_actions,
    integrate_clamped,
    make_selector,
    maneuver_transition,
)
from .mpc import (
    Decision,
    DecisionSnapshot,
    EngineParams,
    SvObservation,
    decide,
)
from .safety import HysteresisState, idm_gap

__all__ = [
    "SimConfig",
    "VehicleInit",
    "EpisodeTrace",
    "EpisodeSummary",
    "EpisodeResult",
    "lateral_offset",
    "collision_pairs",
    "run_episode",
]


@dataclass(frozen=True)
class SimConfig:
    """Timing, vehicle footprint, and surround-policy tuning."""

    dt_low: float = 0.1  # [s] executor substep
    duration: float = 40.0  # [s]
    lane_change_duration: float = 2.0  # [s]
    vehicle_length: float = 5.0  # [m]
    vehicle_width: float = 2.0  # [m]
    sv_perception: float = 100.0  # [m] surround vehicles' own sensing range
    surplus_ratio: float = 1.2  # gap headroom before a surround vehicle speeds up
    speed_tolerance: float = 0.5  # [m/s] dead band around desired speed
    halt_on_collision: bool = False

    def __post_init__(self) -> None:
        if self.dt_low <= 0 or self.duration <= 0:
            raise ValueError("substep and duration must be positive")
        if self.lane_change_duration <= 0:
            raise ValueError("lane change duration must be positive")
        if self.vehicle_length <= 0 or self.vehicle_width <= 0:
            raise ValueError("vehicle footprint must be positive")

    def substeps(self, dt_high: float) -> int:
        ratio = dt_high / self.dt_low
        n = round(ratio)
        if n < 1 or abs(ratio - n) > 1e-9:
            raise ValueError("decision period must be an integer multiple of the substep")
        return n

    def lane_change_steps(self) -> int:
        ratio = self.lane_change_duration / self.dt_low
        n = round(ratio)
        if n < 1 or abs(ratio - n) > 1e-9:
            raise ValueError("lane change duration must be an integer multiple of the substep")
        return n


@dataclass(frozen=True)
class VehicleInit:
    """Initial placement and behavior of one vehicle.

    kind "ev" marks the planner-controlled vehicle (exactly one per
    episode).  Policy vehicles hold ``desired_speed`` and may change lanes
    with per-decision probability ``p_lane_change``.  A ``speed_schedule``
    of (time, speed) pairs turns the vehicle into a scripted tracker that
    follows the piecewise-constant setpoint with bounded acceleration and
    never changes lanes.
    """

    vehicle_id: str
    lane: int
    x: float
    v: float
    kind: str = "sv"
    long_mode: int = 0
    desired_speed: Optional[float] = None
    p_lane_change: float = 0.0
    speed_schedule: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self) -> None:
        if self.kind not in ("ev", "sv"):
            raise ValueError("vehicle kind must be 'ev' or 'sv'")
        if not 0.0 <= self.p_lane_change <= 1.0:
            raise ValueError("lane change probability must lie in [0, 1]")
        if self.speed_schedule is not None:
            times = [t for t, _ in self.speed_schedule]
            if times != sorted(times):
                raise ValueError("speed schedule times must be nondecreasing")


def lateral_offset(y_src: float, y_dst: float, frac: float) -> float:
    """Half-cosine blend between lane centers at progress ``frac`` in [0, 1]."""
    frac = min(max(frac, 0.0), 1.0)
    return y_src + (y_dst - y_src) * 0.5 * (1.0 - math.cos(math.pi * frac))


@dataclass
class _LaneChange:
    source_lane: int
    target_lane: int
    y_src: float
    y_dst: float
    steps_total: int
    steps_done: int = 0

    @property
    def finished(self) -> bool:
        return self.steps_done >= self.steps_total


@dataclass
class _Vehicle:
    """Mutable per-vehicle simulation state."""

    vehicle_id: str
    kind: str
    maneuver: ManeuverState
    x: float
    y: float
    v: float
    desired_speed: float
    p_lane_change: float
    speed_schedule: Optional[tuple[tuple[float, float], ...]]
    # longitudinal anchor, reset at each decision
    anchor_x: float = 0.0
    anchor_v: float = 0.0
    anchor_accel: float = 0.0
    lane_change: Optional[_LaneChange] = None

    @property
    def latched(self) -> bool:
        return self.lane_change is not None

    def lanes(self) -> tuple[int, ...]:
        if self.lane_change is not None:
            return tuple(
                sorted({self.lane_change.source_lane, self.lane_change.target_lane})
            )
        return (self.maneuver.lane,)

    def kin(self) -> KinematicState:
        return KinematicState(x=self.x, y=self.y, v=self.v)

    def scheduled_speed(self, t: float) -> float:
        assert self.speed_schedule is not None
        target = self.speed_schedule[0][1]
        for t_k, v_k in self.speed_schedule:
            if t_k <= t + 1e-12:
                target = v_k
            else:
                break
        return target


def collision_pairs(
    vehicles: Sequence[_Vehicle], length: float, width: float
) -> list[tuple[str, str]]:
    """Axis-aligned overlap test over all pairs; strict inequalities.

    Touching bumpers or running exactly abreast in adjacent lanes does not
    count; only genuine interpenetration of the two boxes does.
    """
    hits = []
    n = len(vehicles)
    for i in range(n):
        a = vehicles[i]
        for j in range(i + 1, n):
            b = vehicles[j]
            if abs(a.x - b.x) < length and abs(a.y - b.y) < width:
                hits.append((a.vehicle_id, b.vehicle_id))
    return hits


@dataclass
class EpisodeTrace:
    """Append-only event log of one episode, serializable to JSONL."""

    header: dict
    records: list[dict] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header, sort_keys=True, separators=(",", ":"))]
        for rec in self.records:
            lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode("utf-8")).hexdigest()

    def by_type(self, record_type: str) -> list[dict]:
        return [r for r in self.records if r["type"] == record_type]


@dataclass(frozen=True)
class EpisodeSummary:
    """Aggregates the evaluation layer consumes."""

    seed: int
    duration: float
    decisions: int
    layer_counts: dict[str, int]
    collided_ev: bool
    collisions_total: int
    collision_time: Optional[float]
    beta_switches: int  # decisions that shifted the longitudinal mode
    lane_changes: int  # lane changes the planner initiated
    avg_speed: float  # [m/s] ego mean over decision instants
    slack_mean: float  # [m] mean total slack per decision
    decide_ms_mean: float
    decide_ms_max: float


@dataclass(frozen=True)
class EpisodeResult:
    summary: EpisodeSummary
    trace: Optional[EpisodeTrace]


def _sv_longitudinal_target(
    sv: _Vehicle,
    vehicles: Sequence[_Vehicle],
    params: EngineParams,
    sim: SimConfig,
) -> int:
    """Desired longitudinal mode for a policy vehicle.

    Brake below the IDM gap, speed up when the gap has at least the
    surplus ratio of headroom and the vehicle is below its desired speed,
    and otherwise steer the mode toward cruising at the desired speed.
    """
    leader = None
    for other in vehicles:
        if other.vehicle_id == sv.vehicle_id:
            continue
        if not any(lane in other.lanes() for lane in sv.lanes()):
            continue
        dx = other.x - sv.x
        if dx <= 0 or dx > sim.sv_perception:
            continue
        if leader is None or dx < leader.x - sv.x:
            leader = other
    tol = sim.speed_tolerance
    if leader is not None:
        gap = leader.x - sv.x
        d_ref = idm_gap(sv.v, leader.v, params.idm)
        if gap < d_ref:
            return -1
        if gap > sim.surplus_ratio * d_ref and sv.v < sv.desired_speed - tol:
            return 1
        if sv.v > sv.desired_speed + tol:
            return -1
        return 0
    if sv.v < sv.desired_speed - tol:
        return 1
    if sv.v > sv.desired_speed + tol:
        return -1
    return 0


def _sv_gap_accepted(
    sv: _Vehicle,
    target_lane: int,
    vehicles: Sequence[_Vehicle],
    params: EngineParams,
) -> bool:
    """IDM-gap acceptance for a lane change into ``target_lane``."""
    for other in vehicles:
        if other.vehicle_id == sv.vehicle_id:
            continue
        if target_lane not in other.lanes():
            continue
        dx = other.x - sv.x
        if dx >= 0:
            if dx < idm_gap(sv.v, other.v, params.idm):
                return False
        else:
            if -dx < idm_gap(other.v, sv.v, params.idm):
                return False
    return True


def _sv_policy_action(
    sv: _Vehicle,
    vehicles: Sequence[_Vehicle],
    geom: LaneGeometry,
    params: EngineParams,
    sim: SimConfig,
    rng: np.random.Generator,
) -> Action:
    u_change = rng.random() if sv.p_lane_change > 0.0 else 1.0
    feasible = feasible_actions(sv.maneuver, geom, sv.latched)
    want = _sv_longitudinal_target(sv, vehicles, params, sim)
    step = max(-1, min(1, want - sv.maneuver.long_mode))
    if step != 0:
        action = Action(0, step)
        return action if action in feasible else KEEP
    if u_change < sv.p_lane_change:
        options = []
        for direction in (-1, 1):
            action = Action(direction, 0)
            if action not in feasible:
                continue
            if _sv_gap_accepted(sv, sv.maneuver.lane + direction, vehicles, params):
                options.append(action)
        if options:
            pick = 0 if len(options) == 1 else int(rng.integers(len(options)))
            return options[pick]
    return KEEP


def _apply_lattice_action(
    vehicle: _Vehicle,
    action: Action,
    geom: LaneGeometry,
    kin: KinematicParams,
    lc_steps: int,
) -> None:
    """Commit a one-step action: update the maneuver and reset the anchor."""
    source_lane = vehicle.maneuver.lane
    vehicle.maneuver = maneuver_transition(vehicle.maneuver, action, geom)
    if action.lat != 0:
        vehicle.lane_change = _LaneChange(
            source_lane=source_lane,
            target_lane=vehicle.maneuver.lane,
            y_src=vehicle.y,
            y_dst=geom.lane_center(vehicle.maneuver.lane),
            steps_total=lc_steps,
        )
    vehicle.anchor_x = vehicle.x
    vehicle.anchor_v = vehicle.v
    vehicle.anchor_accel = kin.mode_accel(vehicle.maneuver.long_mode)


def _apply_scripted_decision(
    vehicle: _Vehicle, t: float, dt_high: float, kin: KinematicParams
) -> None:
    """Scripted trackers pick a bounded acceleration toward the setpoint."""
    target = vehicle.scheduled_speed(t)
    accel = (target - vehicle.v) / dt_high
    accel = max(-kin.decel, min(kin.accel, accel))
    vehicle.anchor_x = vehicle.x
    vehicle.anchor_v = vehicle.v
    vehicle.anchor_accel = accel
    # quantized mode so the planner's observation stays on the lattice
    if accel >= 0.25:
        mode = 1
    elif accel <= -0.25:
        mode = -1
    else:
        mode = 0
    vehicle.maneuver = ManeuverState(vehicle.maneuver.lane, mode)


def _advance_substep(
    vehicle: _Vehicle,
    substep_idx: int,
    substeps: int,
    sim: SimConfig,
    dt_high: float,
    kin: KinematicParams,
) -> None:
    """Sample the anchored closed-form motion at the next substep.

    The final substep evaluates at exactly the decision period, so periods
    never accumulate substep rounding.
    """
    tau = dt_high if substep_idx == substeps else substep_idx * sim.dt_low
    vehicle.x, vehicle.v = integrate_clamped(
        vehicle.anchor_x, vehicle.anchor_v, vehicle.anchor_accel, tau, kin.v_min, kin.v_max
    )
    lc = vehicle.lane_change
    if lc is not None:
        lc.steps_done += 1
        frac = lc.steps_done / lc.steps_total
        vehicle.y = lateral_offset(lc.y_src, lc.y_dst, frac)
        if lc.finished:
            vehicle.y = lc.y_dst
            vehicle.lane_change = None


def _state_record(t: float, vehicles: Sequence[_Vehicle]) -> dict:
    return {
        "type": "state",
        "t": round(t, 6),
        "vehicles": [
            {
                "id": veh.vehicle_id,
                "lane": veh.maneuver.lane,
                "mode": veh.maneuver.long_mode,
                "x": veh.x,
                "y": veh.y,
                "v": veh.v,
                "changing": veh.latched,
            }
            for veh in vehicles
        ],
    }


def run_episode(
    geometry: LaneGeometry,
    vehicles: Sequence[VehicleInit],
    params: EngineParams,
    sim: SimConfig,
    seed: int,
    record_trace: bool = True,
) -> EpisodeResult:
    """Simulate one episode and return its summary (and trace if asked).

    Decisions happen at t = 0, dt, 2*dt, ...; the ego decision runs the
    full layered solve while surround vehicles apply their policy or
    script.  Collisions are checked after every substep.  With
    ``halt_on_collision`` unset the episode keeps running and the summary
    reports the first collision time.
    """
    ev_inits = [v for v in vehicles if v.kind == "ev"]
    if len(ev_inits) != 1:
        raise ValueError("exactly one ego vehicle is required")
    ids = [v.vehicle_id for v in vehicles]
    if len(set(ids)) != len(ids):
        raise ValueError("vehicle ids must be unique")

    substeps = sim.substeps(params.dt)
    lc_steps = sim.lane_change_steps()
    n_low = round(sim.duration / sim.dt_low)
    kin = params.kinematics

    fleet: list[_Vehicle] = []
    for init in sorted(vehicles, key=lambda v: v.vehicle_id):
        desired = init.desired_speed if init.desired_speed is not None else init.v
        fleet.append(
            _Vehicle(
                vehicle_id=init.vehicle_id,
                kind=init.kind,
                maneuver=ManeuverState(init.lane, init.long_mode),
                x=float(init.x),
                y=geometry.lane_center(init.lane),
                v=float(init.v),
                desired_speed=float(desired),
                p_lane_change=float(init.p_lane_change),
                speed_schedule=init.speed_schedule,
            )
        )
    ev = next(v for v in fleet if v.kind == "ev")
    svs = [v for v in fleet if v.kind != "ev"]

    rng = np.random.default_rng(seed)
    hyst = HysteresisState()
    prev_actions: Optional[tuple[Action, ...]] = None

    trace: Optional[EpisodeTrace] = None
    if record_trace:
        trace = EpisodeTrace(
            header={
                "schema": "lanegate-trace/1",
                "seed": int(seed),
                "lane_count": geometry.lane_count,
                "dt_low": sim.dt_low,
                "dt_high": params.dt,
                "duration": sim.duration,
                "vehicles": [v.vehicle_id for v in fleet],
                "ev": ev.vehicle_id,
            }
        )
        trace.records.append(_state_record(0.0, fleet))

    layer_counts = {"nominal": 0, "relaxed": 0, "fallback": 0}
    decide_ms: list[float] = []
    slack_totals: list[float] = []
    speeds: list[float] = []
    beta_switches = 0
    lane_changes = 0
    decisions = 0
    collisions_total = 0
    collided_ev = False
    collision_time: Optional[float] = None
    seen_pairs: set[tuple[str, str]] = set()
    halted = False

    for k in range(n_low):
        t = k * sim.dt_low
        if k % substeps == 0:
            # --- decision instant ---
            speeds.append(ev.v)
            observations = tuple(
                SvObservation(
                    sv_id=veh.vehicle_id,
                    maneuver=veh.maneuver,
                    kin=veh.kin(),
                    lane_set=veh.lanes(),
                    lane_change_in_progress=veh.latched,
                )
                for veh in svs
            )
            snapshot = DecisionSnapshot(
                geometry=geometry,
                ev_maneuver=ev.maneuver,
                ev_kin=ev.kin(),
                svs=observations,
                ev_lane_change_in_progress=ev.latched,
                ev_source_lane=ev.lane_change.source_lane if ev.lane_change else None,
                prev_actions=prev_actions,
            )
            t0 = time.perf_counter()
            decision, hyst = decide(snapshot, hyst, params)
            decide_ms.append((time.perf_counter() - t0) * 1e3)

            layer_counts[decision.layer] += 1
            decisions += 1
            slack_totals.append(decision.slack_total())
            if decision.first_action.long != 0:
                beta_switches += 1
            if decision.first_action.lat != 0:
                lane_changes += 1
            prev_actions = decision.plan.actions
            _apply_lattice_action(ev, decision.first_action, geometry, kin, lc_steps)

            for sv in svs:
                if sv.speed_schedule is not None:
                    _apply_scripted_decision(sv, t, params.dt, kin)
                else:
                    action = _sv_policy_action(sv, fleet, geometry, params, sim, rng)
                    _apply_lattice_action(sv, action, geometry, kin, lc_steps)

            if trace is not None:
                trace.records.append(
                    {
                        "type": "decision",
                        "t": round(t, 6),
                        "action": [decision.first_action.lat, decision.first_action.long],
                        "layer": decision.layer,
                        "cost": decision.cost,
                        "slack_total": decision.slack_total(),
                        "corrective": hyst.active_ids(),
                        "ev_mode": ev.maneuver.long_mode,
                        "ev_lane": ev.maneuver.lane,
                    }
                )

        sub_idx = k % substeps + 1
        for veh in fleet:
            _advance_substep(veh, sub_idx, substeps, sim, params.dt, kin)
        t_next = (k + 1) * sim.dt_low

        if trace is not None:
            trace.records.append(_state_record(t_next, fleet))

        hits = collision_pairs(fleet, sim.vehicle_length, sim.vehicle_width)
        for pair in hits:
            key = tuple(sorted(pair))
            if key in seen_pairs:
                continue
            seen_pairs.add(key)
            collisions_total += 1
            if ev.vehicle_id in key:
                collided_ev = True
            if collision_time is None:
                collision_time = t_next
            if trace is not None:
                trace.records.append(
                    {"type": "collision", "t": round(t_next, 6), "pair": list(key)}
                )
        if hits and sim.halt_on_collision:
            halted = True
            break

    summary = EpisodeSummary(
        seed=int(seed),
        duration=(k + 1) * sim.dt_low if halted else sim.duration,
        decisions=decisions,
        layer_counts=layer_counts,
        collided_ev=collided_ev,
        collisions_total=collisions_total,
        collision_time=collision_time,
        beta_switches=beta_switches,
        lane_changes=lane_changes,
        avg_speed=float(np.mean(speeds)) if speeds else 0.0,
        slack_mean=float(np.mean(slack_totals)) if slack_totals else 0.0,
        decide_ms_mean=float(np.mean(decide_ms)) if decide_ms else 0.0,
        decide_ms_max=float(np.max(decide_ms)) if decide_ms else 0.0,
    )
    return EpisodeResult(summary=summary, trace=trace)
