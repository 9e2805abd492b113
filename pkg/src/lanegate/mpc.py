"""Maneuver MPC: plan enumeration, slack-minimal solve, layered recovery.

Every decision period the planner enumerates all feasible action sequences
over the horizon (at most 5^H), prices each against gap constraints built
from the prediction tree and the hysteresis state, and commits the first
action of the cheapest feasible plan.  Constraint violations are absorbed
by two slack tiers with closed-form minimal values per (vehicle, step):
first the hysteresis slack (available only while corrective mode is active,
capped by the frozen band), then a heavily penalized global slack capped by
a fraction of the IDM gap.  Because the per-plan problem separates by
(vehicle, step) and the cost is increasing in each slack, clamping the
worst-branch deficit is exactly optimal, so enumeration plus clamping
solves the mixed-integer program exactly.

Layer precedence is fixed: nominal (no global slack) first, the relaxed
problem second, and a rule-based fallback action when even the relaxed
problem is infeasible.  ``decide`` never returns "no action".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .hmdp import (
    KEEP,
    Action,
    KinematicParams,
    KinematicState,
    LaneGeometry,
    ManeuverState,
    Selector,
    clip_step,
    feasible_actions,
    integrate_clamped,
    kinematic_step,
    make_selector,
    maneuver_transition,
)
from .prediction import (
    BranchHypothesis,
    PredictionConfig,
    ScenarioTree,
    build_scenario_tree,
    prune_tree,
)
from .safety import (
    CorrectiveState,
    HysteresisState,
    IdmParams,
    RiskParams,
    bandwidth,
    gap_sign,
    hard_margin,
    idm_gap,
    thresholds,
    update_corrective,
)

__all__ = [
    "NOMINAL",
    "RELAXED",
    "FALLBACK",
    "FRONT",
    "REAR",
    "LATERAL",
    "CostWeights",
    "PlannerConfig",
    "EngineParams",
    "CandidatePlan",
    "SvObservation",
    "DecisionSnapshot",
    "SvConstraintData",
    "ConstraintContext",
    "Decision",
    "PlannerProblem",
    "enumerate_plans",
    "required_gap",
    "minimal_slacks",
    "plan_cost",
    "solve_nominal",
    "solve_relaxed",
    "classify_threat",
    "fallback_action",
    "prepare_problem",
    "decide",
]

NOMINAL = "nominal"
RELAXED = "relaxed"
FALLBACK = "fallback"

FRONT = "front"
REAR = "rear"
LATERAL = "lateral"


@dataclass(frozen=True)
class CostWeights:
    """Objective weights: slack penalties, maneuver preferences, speed tracking.

    Maneuver preferences are billed per selector: lateral moves by the
    transition, longitudinal modes by the state occupied (cruise cheapest,
    braking mild, accelerating dearest).  The global slack weight must
    dominate the hysteresis slack weight by at least 10x so the relaxed
    layer is only ever used as a last resort before the fallback.
    """

    w_slack: float = 100.0  # per meter of hysteresis slack per step
    w_global: float = 1.0e4  # per meter of global slack per step
    w_speed: float = 2.0  # per m/s of reference-speed deviation per step
    v_ref: float = 20.0  # [m/s]
    lat_weight: float = 5.0  # per lane change
    mode_weights: tuple[float, float, float] = (1.0, 0.0, 2.0)  # decel, cruise, accel

    def __post_init__(self) -> None:
        if min(self.w_slack, self.w_global, self.w_speed, self.lat_weight) < 0:
            raise ValueError("weights must be nonnegative")
        if min(self.mode_weights) < 0:
            raise ValueError("mode weights must be nonnegative")
        if self.w_global < 10.0 * self.w_slack:
            raise ValueError("global slack weight must be at least 10x the hysteresis weight")

    def selector_weight(self, sel: Selector) -> float:
        return self.lat_weight * abs(sel.lat) + self.mode_weights[sel.long_mode + 1]

    def selector_table(self) -> dict[Selector, float]:
        """The full selector-to-weight map (mostly for inspection/tests)."""
        table = {}
        for lat in (-1, 0, 1):
            for mode in (-1, 0, 1):
                sel = Selector(lat, mode)
                table[sel] = self.selector_weight(sel)
        return table


@dataclass(frozen=True)
class PlannerConfig:
    """Horizon, recovery caps, and scope of the decision layer."""

    horizon: int = 3
    slack_ratio: float = 0.1  # global slack cap as a fraction of the IDM gap
    hysteresis: bool = True
    perception_range: float = 100.0  # [m] vehicles beyond this are ignored
    abreast_range: float = 5.0  # [m] |dx| treated as "alongside" in fallback
    flee_margin: float = 0.5  # [m/s] leader speed surplus that stands down corrective mode

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be at least one step")
        if self.slack_ratio < 0:
            raise ValueError("slack ratio must be nonnegative")
        if self.perception_range <= 0:
            raise ValueError("perception range must be positive")


@dataclass(frozen=True)
class EngineParams:
    """Everything the decision layer needs besides the world snapshot."""

    kinematics: KinematicParams = KinematicParams()
    idm: IdmParams = IdmParams()
    risk: RiskParams = RiskParams()
    weights: CostWeights = CostWeights()
    prediction: PredictionConfig = PredictionConfig()
    planner: PlannerConfig = PlannerConfig()
    dt: float = 0.4  # [s] decision period

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("decision period must be positive")


@dataclass(frozen=True)
class CandidatePlan:
    """A rolled-out action sequence for the ego vehicle."""

    actions: tuple[Action, ...]
    selectors: tuple[Selector, ...]
    states: tuple[KinematicState, ...]
    maneuvers: tuple[ManeuverState, ...]
    lane_sets: tuple[tuple[int, ...], ...]

    def key(self) -> tuple[tuple[int, int], ...]:
        return tuple(a.key() for a in self.actions)


@dataclass(frozen=True)
class SvObservation:
    """Surrounding-vehicle state as seen at decision time."""

    sv_id: str
    maneuver: ManeuverState
    kin: KinematicState
    lane_set: tuple[int, ...] = ()
    lane_change_in_progress: bool = False

    def lanes(self) -> tuple[int, ...]:
        return self.lane_set if self.lane_set else (self.maneuver.lane,)


@dataclass(frozen=True)
class DecisionSnapshot:
    """Ego + surround state handed to ``decide`` once per decision period."""

    geometry: LaneGeometry
    ev_maneuver: ManeuverState
    ev_kin: KinematicState
    svs: tuple[SvObservation, ...] = ()
    ev_lane_change_in_progress: bool = False
    ev_source_lane: Optional[int] = None  # lane being left while mid-change
    prev_actions: Optional[tuple[Action, ...]] = None  # last committed plan

    def ev_lanes(self) -> tuple[int, ...]:
        if self.ev_lane_change_in_progress and self.ev_source_lane is not None:
            return tuple(sorted({self.ev_source_lane, self.ev_maneuver.lane}))
        return (self.ev_maneuver.lane,)


@dataclass(frozen=True)
class SvConstraintData:
    """Per-vehicle constraint ingredients, fixed for one decision."""

    sv_id: str
    sign: int  # +1 ego behind, -1 ego ahead, from current positions
    d_idm: float  # [m] IDM gap at current speeds
    entry: CorrectiveState  # hysteresis entry after this period's refresh
    hard_margins: tuple[tuple[float, ...], ...]  # per branch, per step
    global_cap: float  # [m] relaxed-layer slack cap

    @property
    def corrective(self) -> bool:
        return self.entry.active and self.sign == 1

    def threshold(self, branch_idx: int, h: int) -> float:
        hard = self.hard_margins[branch_idx][h]
        if self.corrective:
            assert self.entry.release_gap is not None
            # The frozen release is a floor on the following regime; it
            # never undercuts the live chance margin of the cell.
            return max(self.entry.release_gap, hard)
        return hard

    @property
    def hyst_cap(self) -> float:
        if self.corrective:
            assert self.entry.band is not None
            return self.entry.band
        return 0.0


@dataclass
class ConstraintContext:
    """All per-vehicle constraint data for one decision, keyed by id."""

    svs: dict[str, SvConstraintData] = field(default_factory=dict)


@dataclass(frozen=True)
class Decision:
    """Committed output of one decision period."""

    first_action: Action
    plan: CandidatePlan
    slacks: dict[tuple[str, int], tuple[float, float]]
    cost: Optional[float]
    layer: str

    def slack_total(self) -> float:
        return sum(dh + dg for dh, dg in self.slacks.values())


def _lanes_overlap(a: Sequence[int], b: Sequence[int]) -> bool:
    return any(lane in b for lane in a)


def enumerate_plans(
    m0: ManeuverState,
    kin0: KinematicState,
    horizon: int,
    geom: LaneGeometry,
    kin_params: KinematicParams,
    dt: float,
    lane_change_in_progress: bool = False,
    source_lane: Optional[int] = None,
) -> list[CandidatePlan]:
    """All feasible plans from ``m0``, in lexicographic action order.

    While the executor is latched to a running lane change, lateral actions
    are masked over the whole horizon (the plan is re-made every period, so
    this costs nothing) and the source lane is added to every step's
    occupied-lane set.
    """
    plans: list[CandidatePlan] = []
    extra = (source_lane,) if lane_change_in_progress and source_lane is not None else ()

    def grow(
        m: ManeuverState,
        kin: KinematicState,
        actions: tuple[Action, ...],
        selectors: tuple[Selector, ...],
        states: tuple[KinematicState, ...],
        maneuvers: tuple[ManeuverState, ...],
        lanes: tuple[tuple[int, ...], ...],
    ) -> None:
        if len(actions) == horizon:
            plans.append(
                CandidatePlan(
                    actions=actions,
                    selectors=selectors,
                    states=states,
                    maneuvers=maneuvers,
                    lane_sets=lanes,
                )
            )
            return
        for action in feasible_actions(m, geom, lane_change_in_progress):
            sel = make_selector(action, m.long_mode)
            m_next = maneuver_transition(m, action, geom)
            kin_next = kinematic_step(kin, sel, dt, kin_params, geom, target_lane=m_next.lane)
            if action.lat != 0:
                step_lanes = tuple(sorted({m.lane, m_next.lane, *extra}))
            else:
                step_lanes = tuple(sorted({m_next.lane, *extra}))
            grow(
                m_next,
                kin_next,
                actions + (action,),
                selectors + (sel,),
                states + (kin_next,),
                maneuvers + (m_next,),
                lanes + (step_lanes,),
            )

    grow(m0, kin0, (), (), (), (), ())
    return plans


def required_gap(
    entry: CorrectiveState,
    sign: int,
    d_idm: float,
    variance: float,
    risk: RiskParams,
    layer: str,
    slack_ratio: float,
) -> tuple[float, float, float]:
    """(threshold, hysteresis cap, global cap) for one constraint cell.

    Ego ahead, or corrective mode inactive: the chance-constraint hard
    margin applies and no hysteresis slack exists.  Ego behind with
    corrective mode active: the frozen release threshold applies, softened
    by up to the frozen band.  The frozen value is a regime floor, not a
    ceiling, so it never undercuts the live chance margin (a leader that
    brakes hard after the trigger still gets the full closing-speed
    margin).  The global slack cap opens only in the relaxed layer.
    """
    if entry.active and sign == 1:
        assert entry.release_gap is not None and entry.band is not None
        threshold = max(entry.release_gap, hard_margin(d_idm, variance, risk))
        hyst_cap = entry.band
        cap_ref = entry.idm_ref if entry.idm_ref is not None else d_idm
    else:
        threshold = hard_margin(d_idm, variance, risk)
        hyst_cap = 0.0
        cap_ref = d_idm
    global_cap = slack_ratio * cap_ref if layer == RELAXED else 0.0
    return threshold, hyst_cap, global_cap


def minimal_slacks(
    plan: CandidatePlan,
    tree: ScenarioTree,
    ctx: ConstraintContext,
    layer: str,
) -> Optional[dict[tuple[str, int], tuple[float, float]]]:
    """Cheapest slack assignment satisfying every active constraint, or None.

    A constraint cell (vehicle, step) is active for every retained branch
    whose occupied lanes overlap the plan's.  One slack pair serves all
    branches of a cell, so its minimal value is the worst-branch deficit,
    filled hysteresis-first (cheaper) and clamped to the caps.  Returns
    None as soon as a residual deficit survives both caps.
    """
    slacks: dict[tuple[str, int], tuple[float, float]] = {}
    for sv_id in sorted(ctx.svs):
        data = ctx.svs[sv_id]
        branches = tree.branches.get(sv_id, [])
        if not branches:
            continue
        cap_h = data.hyst_cap
        cap_g = data.global_cap if layer == RELAXED else 0.0
        for h, (ev_state, ev_lanes) in enumerate(zip(plan.states, plan.lane_sets)):
            need = 0.0
            for j, b in enumerate(branches):
                if not _lanes_overlap(ev_lanes, b.lane_sets[h]):
                    continue
                mu = data.sign * (b.means[h].x - ev_state.x)
                deficit = data.threshold(j, h) - mu
                if deficit > need:
                    need = deficit
            if need <= 0.0:
                continue
            dh = min(need, cap_h)
            rem = need - dh
            if rem > cap_g:
                return None
            dg = min(rem, cap_g)
            slacks[(sv_id, h)] = (dh, dg)
    return slacks


def plan_cost(
    plan: CandidatePlan,
    slacks: dict[tuple[str, int], tuple[float, float]],
    weights: CostWeights,
) -> float:
    """Total plan cost: slack penalties, maneuver preferences, speed tracking."""
    cost = 0.0
    for sel in plan.selectors:
        cost += weights.selector_weight(sel)
    for st in plan.states:
        cost += weights.w_speed * abs(st.v - weights.v_ref)
    for dh, dg in slacks.values():
        cost += weights.w_slack * dh + weights.w_global * dg
    return cost


@dataclass
class PlannerProblem:
    """One decision period's solve inputs, shared by both layers."""

    plans: list[CandidatePlan]
    tree: ScenarioTree
    ctx: ConstraintContext
    weights: CostWeights


def _solve_layer(problem: PlannerProblem, layer: str) -> Optional[Decision]:
    best_cost = math.inf
    best: Optional[tuple[CandidatePlan, dict]] = None
    for plan in problem.plans:
        slacks = minimal_slacks(plan, problem.tree, problem.ctx, layer)
        if slacks is None:
            continue
        cost = plan_cost(plan, slacks, problem.weights)
        # strict < keeps the lexicographically first plan on exact ties
        if cost < best_cost:
            best_cost = cost
            best = (plan, slacks)
    if best is None:
        return None
    plan, slacks = best
    return Decision(
        first_action=plan.actions[0],
        plan=plan,
        slacks=slacks,
        cost=best_cost,
        layer=layer,
    )


def solve_nominal(problem: PlannerProblem) -> Optional[Decision]:
    """Solve with the global slack closed (hysteresis slack only)."""
    return _solve_layer(problem, NOMINAL)


def solve_relaxed(problem: PlannerProblem) -> Optional[Decision]:
    """Solve with the global slack opened up to its cap."""
    return _solve_layer(problem, RELAXED)


def _merge_blocked_lanes(
    ev_kin: KinematicState,
    ev_lanes: Sequence[int],
    svs: Sequence[SvObservation],
    geom: LaneGeometry,
    params: EngineParams,
) -> dict[str, frozenset[int]]:
    """Adjacent lanes whose slot cannot accept each vehicle right now.

    Surrounding drivers change lanes only into a slot that clears the IDM
    gap on both sides, so a lateral hypothesis into a blocked slot has no
    probability mass; enumerating it anyway would make the ego yield to
    moves nobody can execute (most visibly: it could never pass a vehicle
    that might in principle merge toward it).  The acceptance test mirrors
    the traffic policy: against every other vehicle, the ego included, the
    mover needs its own IDM gap to a body ahead and grants the follower
    gap to a body behind.
    """
    bodies = [("", ev_kin.x, ev_kin.v, tuple(ev_lanes))]
    bodies += [(sv.sv_id, sv.kin.x, sv.kin.v, sv.lanes()) for sv in svs]
    blocked: dict[str, frozenset[int]] = {}
    for sv in svs:
        shut = set()
        for direction in (-1, 1):
            target = sv.maneuver.lane + direction
            if not 1 <= target <= geom.lane_count:
                continue
            for other_id, ox, ovel, olanes in bodies:
                if other_id == sv.sv_id or target not in olanes:
                    continue
                dx = ox - sv.kin.x
                if dx >= 0:
                    if dx < idm_gap(sv.kin.v, ovel, params.idm):
                        shut.add(target)
                        break
                elif -dx < idm_gap(ovel, sv.kin.v, params.idm):
                    shut.add(target)
                    break
        if shut:
            blocked[sv.sv_id] = frozenset(shut)
    return blocked


def _binding_vehicle(
    plans: Sequence[CandidatePlan],
    tree: ScenarioTree,
    ctx: ConstraintContext,
) -> Optional[str]:
    """Vehicle with the worst residual deficit on the most passive plan.

    Scans the all-keep candidate (falling back to the first plan) under
    relaxed-layer caps and returns the id whose constraint cell overshoots
    its slack budget the most.  This is the vehicle the rule fallback
    should be reacting to; distance alone can point at a bystander.
    """
    plan = next(
        (p for p in plans if all(a.lat == 0 and a.long == 0 for a in p.actions)),
        plans[0] if plans else None,
    )
    if plan is None:
        return None
    worst_id = None
    worst = 0.0
    for sv_id in sorted(ctx.svs):
        data = ctx.svs[sv_id]
        branches = tree.branches.get(sv_id, [])
        cap = data.hyst_cap + data.global_cap
        for h, (state, lanes) in enumerate(zip(plan.states, plan.lane_sets)):
            for j, b in enumerate(branches):
                if not _lanes_overlap(lanes, b.lane_sets[h]):
                    continue
                mu = data.sign * (b.means[h].x - state.x)
                resid = data.threshold(j, h) - mu - cap
                if resid > worst:
                    worst = resid
                    worst_id = sv_id
    return worst_id


def classify_threat(
    ev_kin: KinematicState,
    ev_lanes: Sequence[int],
    svs: Sequence[SvObservation],
    abreast_range: float,
    culprit_id: Optional[str] = None,
) -> str:
    """Dominant threat for the rule fallback: front, rear, or lateral.

    When the caller knows which vehicle drives the infeasibility it passes
    ``culprit_id`` and that vehicle is classified directly: abreast in an
    adjacent lane is lateral, otherwise its longitudinal side decides.
    Without a culprit the nearest vehicle overall wins if it sits in an
    adjacent lane within the abreast range; otherwise the nearest same-lane
    vehicle decides by its side.  With no same-lane vehicle the
    conservative default is front.
    """
    if not svs:
        return FRONT
    culprit = next((sv for sv in svs if sv.sv_id == culprit_id), None)
    if culprit is not None:
        lane_dist = min(
            abs(la - lb) for la in culprit.lanes() for lb in ev_lanes
        )
        if lane_dist >= 1 and abs(culprit.kin.x - ev_kin.x) <= abreast_range:
            return LATERAL
        return FRONT if culprit.kin.x >= ev_kin.x else REAR
    ordered = sorted(svs, key=lambda sv: (abs(sv.kin.x - ev_kin.x), sv.sv_id))
    nearest = ordered[0]
    lane_dist = min(
        abs(la - lb) for la in nearest.lanes() for lb in ev_lanes
    )
    if lane_dist == 1 and abs(nearest.kin.x - ev_kin.x) <= abreast_range:
        return LATERAL
    same = [sv for sv in ordered if _lanes_overlap(sv.lanes(), ev_lanes)]
    if not same:
        return FRONT
    return FRONT if same[0].kin.x >= ev_kin.x else REAR


def fallback_action(threat: str, m: ManeuverState) -> Action:
    """Rule-based action driving the longitudinal mode toward safety.

    Front threat: toward full deceleration.  Rear threat: toward full
    acceleration.  Lateral threat: toward cruise (hold the longitudinal
    position steady while the lanes sort themselves out).  The lattice
    allows one step per period, so the target mode may take two periods to
    reach.  The lateral command stays empty; a running lane change keeps
    executing regardless.
    """
    target_mode = {FRONT: -1, REAR: 1, LATERAL: 0}[threat]
    step = max(-1, min(1, target_mode - m.long_mode))
    return Action(0, step)


def _rollout_plan(
    m0: ManeuverState,
    kin0: KinematicState,
    actions: Sequence[Action],
    geom: LaneGeometry,
    kin_params: KinematicParams,
    dt: float,
    extra_lanes: tuple[int, ...] = (),
) -> CandidatePlan:
    selectors = []
    states = []
    maneuvers = []
    lanes = []
    m = m0
    kin = kin0
    for action in actions:
        sel = make_selector(action, m.long_mode)
        m_prev = m
        m = maneuver_transition(m, action, geom)
        kin = kinematic_step(kin, sel, dt, kin_params, geom, target_lane=m.lane)
        if action.lat != 0:
            lanes.append(tuple(sorted({m_prev.lane, m.lane, *extra_lanes})))
        else:
            lanes.append(tuple(sorted({m.lane, *extra_lanes})))
        selectors.append(sel)
        states.append(kin)
        maneuvers.append(m)
    return CandidatePlan(
        actions=tuple(actions),
        selectors=tuple(selectors),
        states=tuple(states),
        maneuvers=tuple(maneuvers),
        lane_sets=tuple(lanes),
    )


def _longitudinal_profile(
    x: float,
    v: float,
    mode: int,
    tail: Sequence[Action],
    horizon: int,
    kin_params: KinematicParams,
    dt: float,
) -> list[float]:
    """Ego x over the horizon under the committed plan's longitudinal modes.

    Used only by the hysteresis refresh; lateral components do not move x,
    so they are ignored, and mode shifts that no longer fit the lattice
    degrade to holding the mode.
    """
    xs = []
    for h in range(horizon):
        shift = tail[h].long if h < len(tail) else 0
        mode_next = clip_step(mode, shift, -1, 1)
        mode = mode_next if mode_next is not None else mode
        a = kin_params.mode_accel(mode)
        x, v = integrate_clamped(x, v, a, dt, kin_params.v_min, kin_params.v_max)
        xs.append(x)
    return xs


def _refresh_hysteresis(
    snapshot: DecisionSnapshot,
    active_svs: Sequence[SvObservation],
    prep: dict[str, tuple[int, float, float, float]],
    hyst: HysteresisState,
    params: EngineParams,
) -> None:
    """One per-period hysteresis update, before the solve.

    Predicted gaps come from a fresh rollout: the surrounding vehicle under
    its all-keep hypothesis against the ego's previously committed plan.
    Only front vehicles sharing the ego's lane corridor hold corrective
    entries; entries of vehicles that moved behind, left the corridor, or
    left the perception window are cleared.
    """
    horizon = params.planner.horizon
    kin = params.kinematics
    ev = snapshot.ev_kin
    tail = snapshot.prev_actions[1:] if snapshot.prev_actions else ()
    ev_xs = _longitudinal_profile(
        ev.x, ev.v, snapshot.ev_maneuver.long_mode, tail, horizon, kin, params.dt
    )
    ev_lanes = snapshot.ev_lanes()
    relevant_ids = set()
    for sv in active_svs:
        sign, d_idm, trigger_gap, release_gap = prep[sv.sv_id]
        if sign != 1 or not _lanes_overlap(sv.lanes(), ev_lanes):
            continue
        if sv.kin.v > ev.v + params.planner.flee_margin:
            # A leader pulling away is not a following-regime threat: the
            # gap reopens on its own and the live chance margin (floored by
            # the jam term) still guards the cell.  Arming or holding the
            # corrective entry here would pin the ego to a frozen release
            # no current dynamics require.
            continue
        relevant_ids.add(sv.sv_id)
        sv_xs = _longitudinal_profile(
            sv.kin.x, sv.kin.v, sv.maneuver.long_mode, (), horizon, kin, params.dt
        )
        gaps = [sx - ex for sx, ex in zip(sv_xs, ev_xs)]
        hyst.put(
            sv.sv_id,
            update_corrective(hyst.get(sv.sv_id), gaps, trigger_gap, release_gap, d_idm),
        )
    for sv_id in list(hyst.entries):
        if sv_id not in relevant_ids:
            hyst.put(sv_id, CorrectiveState())


def prepare_problem(
    snapshot: DecisionSnapshot,
    hyst: HysteresisState,
    params: EngineParams,
) -> tuple[PlannerProblem, HysteresisState]:
    """Build one period's solve inputs without committing a decision.

    Runs the perception filter, the hysteresis refresh, the prediction
    tree, the constraint assembly, and the plan enumeration, exactly as
    ``decide`` does (``decide`` calls this).  Exposed separately so the
    solve stage can be checked against independent optimizers on the very
    problem the engine saw.
    """
    geom = snapshot.geometry
    risk = params.risk
    planner = params.planner
    pred_cfg = params.prediction
    hyst = hyst.copy()

    ev = snapshot.ev_kin
    active = [
        sv for sv in snapshot.svs if abs(sv.kin.x - ev.x) <= planner.perception_range
    ]
    active.sort(key=lambda sv: sv.sv_id)

    # Per-vehicle margins at current speeds; fixed through the whole solve.
    # The IDM gap is the follower's requirement, so the follower's speed
    # goes first: the ego's against a front vehicle, the vehicle's own
    # against the ego when it sits behind.
    #
    # The trigger/release corridor is sized from the steady-state following
    # distance at the current ego speed (closing term zero).  Sizing it
    # from the closing-speed gap would fire the trigger in mid-approach and
    # freeze a release scaled to the peak approach speed, a gap that
    # equilibrium following can never reopen; the per-cell margins below
    # keep the full closing-speed term, so approach braking is still
    # enforced step by step.
    prep: dict[str, tuple[int, float, float, float]] = {}
    one_step_var = pred_cfg.var0 + pred_cfg.step_var
    d_follow = idm_gap(ev.v, ev.v, params.idm)
    follow_band = bandwidth(d_follow, risk)
    trigger_gap, release_gap = thresholds(
        hard_margin(d_follow, one_step_var, risk), follow_band, risk
    )
    for sv in active:
        sign = gap_sign(ev.x, sv.kin.x)
        if sign == 1:
            d_idm = idm_gap(ev.v, sv.kin.v, params.idm)
        else:
            d_idm = idm_gap(sv.kin.v, ev.v, params.idm)
        prep[sv.sv_id] = (sign, d_idm, trigger_gap, release_gap)

    if planner.hysteresis:
        _refresh_hysteresis(snapshot, active, prep, hyst, params)
    else:
        hyst = HysteresisState()

    tree = build_scenario_tree(
        [(sv.sv_id, sv.maneuver, sv.kin) for sv in active],
        planner.horizon,
        params.dt,
        params.kinematics,
        geom,
        pred_cfg,
        prefix_cutoff=pred_cfg.p_min,
        lane_change_in_progress={
            sv.sv_id: sv.lane_change_in_progress for sv in active
        },
        blocked_lanes=_merge_blocked_lanes(
            ev, snapshot.ev_lanes(), active, geom, params
        ),
    )
    tree = prune_tree(tree, pred_cfg.p_min, pred_cfg.max_branches)

    ctx = ConstraintContext()
    ev_home = set(snapshot.ev_lanes())
    for sv in active:
        sign, d_idm, _, _ = prep[sv.sv_id]
        entry = hyst.get(sv.sv_id)
        home = set(sv.lanes())
        # A trailing vehicle owes its own spacing: one already following in
        # the ego's lane regulates its own gap, and one hypothesized to
        # merge behind the ego owes the gap it would create.  Demanding the
        # full follower requirement in either case wedges the solver
        # against behaviour the ego cannot influence, so those cells keep
        # jam spacing only.  The full requirement stays on trailers in
        # lanes the ego itself may enter; that is what prices the ego's
        # own cut-ins.
        trails_ev = sign == -1 and bool(home & ev_home)
        margins = []
        for b in tree.branches.get(sv.sv_id, []):
            row = []
            for h, var in enumerate(b.cov_long):
                ref = d_idm
                if sign == -1 and (trails_ev or not set(b.lane_sets[h]) <= home):
                    ref = params.idm.jam_distance
                row.append(hard_margin(ref, var, risk))
            margins.append(tuple(row))
        margins = tuple(margins)
        # While an entry is held the threshold is frozen, so the relaxed
        # cap is sized off the frozen IDM reference rather than chasing
        # the current-speed gap downward as the ego decelerates.
        cap_ref = entry.idm_ref if entry.active and entry.idm_ref is not None else d_idm
        ctx.svs[sv.sv_id] = SvConstraintData(
            sv_id=sv.sv_id,
            sign=sign,
            d_idm=d_idm,
            entry=entry,
            hard_margins=margins,
            global_cap=planner.slack_ratio * cap_ref,
        )

    plans = enumerate_plans(
        snapshot.ev_maneuver,
        ev,
        planner.horizon,
        geom,
        params.kinematics,
        params.dt,
        lane_change_in_progress=snapshot.ev_lane_change_in_progress,
        source_lane=snapshot.ev_source_lane,
    )
    problem = PlannerProblem(plans=plans, tree=tree, ctx=ctx, weights=params.weights)
    return problem, hyst


def decide(
    snapshot: DecisionSnapshot,
    hyst: HysteresisState,
    params: EngineParams,
) -> tuple[Decision, HysteresisState]:
    """Run one full decision period and return the committed decision.

    Order per period: perception filter, hysteresis refresh, prediction
    tree, nominal solve, relaxed solve, rule fallback.  The returned
    hysteresis state replaces the caller's copy.
    """
    problem, hyst = prepare_problem(snapshot, hyst, params)
    decision = solve_nominal(problem)
    if decision is None:
        decision = solve_relaxed(problem)
    if decision is None:
        ev = snapshot.ev_kin
        planner = params.planner
        active = [
            sv
            for sv in snapshot.svs
            if abs(sv.kin.x - ev.x) <= planner.perception_range
        ]
        active.sort(key=lambda sv: sv.sv_id)
        culprit = _binding_vehicle(problem.plans, problem.tree, problem.ctx)
        threat = classify_threat(
            ev, snapshot.ev_lanes(), active, planner.abreast_range, culprit_id=culprit
        )
        action = fallback_action(threat, snapshot.ev_maneuver)
        plan = _rollout_plan(
            snapshot.ev_maneuver,
            ev,
            [action] + [KEEP] * (planner.horizon - 1),
            snapshot.geometry,
            params.kinematics,
            params.dt,
            extra_lanes=tuple(
                lane for lane in snapshot.ev_lanes() if lane != snapshot.ev_maneuver.lane
            ),
        )
        decision = Decision(
            first_action=action,
            plan=plan,
            slacks={},
            cost=None,
            layer=FALLBACK,
        )
    return decision, hyst
