"""Multi-hypothesis surround-vehicle prediction over the maneuver lattice.

Each surrounding vehicle gets a small tree of action-sequence hypotheses.
A per-step prior puts most mass on "keep doing what you do" and spreads the
rest uniformly over the other feasible one-step actions; branch probability
is the product of its step probabilities.  Branch means follow the same
kinematic maps the planner uses, and the longitudinal variance grows
linearly with the prediction step.  Pruning keeps the tree small: drop
branches below a probability floor, keep the top-K of the survivors, always
retain the all-keep branch, renormalize.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .hmdp import (
    KEEP,
    Action,
    KinematicParams,
    KinematicState,
    LaneGeometry,
    ManeuverState,
    feasible_actions,
    kinematic_step,
    make_selector,
    maneuver_transition,
)

__all__ = [
    "PredictionConfig",
    "BranchHypothesis",
    "ScenarioTree",
    "sv_action_prior",
    "propagate_branch",
    "build_scenario_tree",
    "prune_tree",
]


@dataclass(frozen=True)
class PredictionConfig:
    """Prior, pruning, and noise parameters of the prediction layer."""

    p_keep: float = 0.8  # prior mass on the keep action per step
    p_min: float = 0.05  # branches below this probability are dropped
    max_branches: int = 3  # per-vehicle cap after pruning
    var0: float = 0.0  # [m2] longitudinal variance at the current step
    step_var: float = 0.25  # [m2] added variance per prediction step

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_keep <= 1.0:
            raise ValueError("p_keep must lie in [0, 1]")
        if not 0.0 <= self.p_min <= 1.0:
            raise ValueError("p_min must lie in [0, 1]")
        if self.max_branches < 1:
            raise ValueError("need at least one branch per vehicle")
        if self.var0 < 0 or self.step_var < 0:
            raise ValueError("variances must be nonnegative")


def _lane_sets(maneuvers: Sequence[ManeuverState], start_lane: int) -> tuple[tuple[int, ...], ...]:
    """Occupied-lane sets per step; a lane change occupies both lanes that step."""
    sets = []
    prev = start_lane
    for m in maneuvers:
        if m.lane != prev:
            sets.append(tuple(sorted((prev, m.lane))))
        else:
            sets.append((m.lane,))
        prev = m.lane
    return tuple(sets)


@dataclass(frozen=True)
class BranchHypothesis:
    """One predicted action sequence of a surrounding vehicle.

    ``means[h]`` and ``cov_long[h]`` describe the Gaussian longitudinal
    position at step h+1 (variance grows with the step); ``maneuvers`` and
    ``lane_sets`` carry the discrete side of the rollout for lane
    co-occupancy tests.
    """

    sv_id: str
    actions: tuple[Action, ...]
    probability: float
    means: tuple[KinematicState, ...]
    cov_long: tuple[float, ...]
    maneuvers: tuple[ManeuverState, ...]
    lane_sets: tuple[tuple[int, ...], ...]

    def is_all_keep(self) -> bool:
        return all(a == KEEP for a in self.actions)


@dataclass
class ScenarioTree:
    """Per-vehicle branch lists, keyed by vehicle id."""

    branches: dict[str, list[BranchHypothesis]] = field(default_factory=dict)

    def total_probability(self, sv_id: str) -> float:
        return sum(b.probability for b in self.branches.get(sv_id, []))

    def branch_count(self, sv_id: str) -> int:
        return len(self.branches.get(sv_id, []))


def sv_action_prior(
    m: ManeuverState,
    geom: LaneGeometry,
    p_keep: float,
    lane_change_in_progress: bool = False,
) -> dict[Action, float]:
    """Per-step action prior of a surrounding vehicle in maneuver state ``m``.

    Keep gets ``p_keep``; the remaining mass is uniform over the other
    feasible actions.  If keep is the only feasible action it carries all
    the mass.  Probabilities sum to one exactly over the feasible set.
    """
    actions = feasible_actions(m, geom, lane_change_in_progress)
    others = [a for a in actions if a != KEEP]
    if not others:
        return {KEEP: 1.0}
    if p_keep >= 1.0:
        prior = {a: 0.0 for a in actions}
        prior[KEEP] = 1.0
        return prior
    share = (1.0 - p_keep) / len(others)
    prior = {a: (p_keep if a == KEEP else share) for a in actions}
    return prior


def propagate_branch(
    kin0: KinematicState,
    m0: ManeuverState,
    actions: Sequence[Action],
    dt: float,
    kin_params: KinematicParams,
    geom: LaneGeometry,
    cfg: PredictionConfig,
) -> tuple[tuple[KinematicState, ...], tuple[float, ...], tuple[ManeuverState, ...]]:
    """Roll an action sequence forward through the lattice kinematics.

    Returns the per-step mean states, the per-step longitudinal variances
    (var0 + h * step_var at step h), and the maneuver states after each
    action.
    """
    means = []
    covs = []
    maneuvers = []
    m = m0
    kin = kin0
    for h, action in enumerate(actions, start=1):
        sel = make_selector(action, m.long_mode)
        m = maneuver_transition(m, action, geom)
        kin = kinematic_step(kin, sel, dt, kin_params, geom, target_lane=m.lane)
        means.append(kin)
        covs.append(cfg.var0 + h * cfg.step_var)
        maneuvers.append(m)
    return tuple(means), tuple(covs), tuple(maneuvers)


def build_scenario_tree(
    svs: Iterable[tuple[str, ManeuverState, KinematicState]],
    horizon: int,
    dt: float,
    kin_params: KinematicParams,
    geom: LaneGeometry,
    cfg: PredictionConfig,
    prefix_cutoff: float = 0.0,
    lane_change_in_progress: Optional[dict[str, bool]] = None,
    blocked_lanes: Optional[dict[str, frozenset[int]]] = None,
) -> ScenarioTree:
    """Enumerate action-sequence hypotheses for every surrounding vehicle.

    Branch probability is the product of the per-step prior probabilities
    along the sequence.  ``prefix_cutoff`` prunes subtrees whose running
    probability already fell below the cutoff (prefix probability bounds
    branch probability, so this matches enumerate-then-prune); the all-keep
    path is exempt so it always survives.  Vehicles currently executing a
    lane change keep lateral actions masked at the first predicted step.
    ``blocked_lanes`` drops lateral hypotheses into lanes whose destination
    slot cannot accept the vehicle at observation time, renormalizing the
    removed mass over the remaining actions; drivers only change lanes
    into an accepted gap, so such branches carry no real probability.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least one step")
    latched = lane_change_in_progress or {}
    shut_map = blocked_lanes or {}
    tree = ScenarioTree()
    for sv_id, m0, kin0 in svs:
        branches: list[BranchHypothesis] = []

        def grow(
            m: ManeuverState,
            prefix: tuple[Action, ...],
            prob: float,
            all_keep: bool,
            sv_id: str = sv_id,
            m0: ManeuverState = m0,
            kin0: KinematicState = kin0,
            out: list[BranchHypothesis] = branches,
        ) -> None:
            depth = len(prefix)
            if depth == horizon:
                means, covs, maneuvers = propagate_branch(
                    kin0, m0, prefix, dt, kin_params, geom, cfg
                )
                out.append(
                    BranchHypothesis(
                        sv_id=sv_id,
                        actions=prefix,
                        probability=prob,
                        means=means,
                        cov_long=covs,
                        maneuvers=maneuvers,
                        lane_sets=_lane_sets(maneuvers, m0.lane),
                    )
                )
                return
            latch_now = depth == 0 and latched.get(sv_id, False)
            prior = sv_action_prior(m, geom, cfg.p_keep, lane_change_in_progress=latch_now)
            shut = shut_map.get(sv_id)
            if shut:
                kept = {
                    a: p
                    for a, p in prior.items()
                    if a.lat == 0 or m.lane + a.lat not in shut
                }
                if len(kept) < len(prior):
                    total = sum(kept.values())
                    prior = {a: p / total for a, p in kept.items()}
            for action in sorted(prior, key=Action.key):
                p_next = prob * prior[action]
                keep_next = all_keep and action == KEEP
                if p_next <= 0.0:
                    continue
                if not keep_next and p_next < prefix_cutoff:
                    continue
                grow(maneuver_transition(m, action, geom), prefix + (action,), p_next, keep_next)

        grow(m0, (), 1.0, True)
        tree.branches[sv_id] = branches
    return tree


def _branch_order(b: BranchHypothesis) -> tuple:
    # Highest probability first; lexicographic action sequence breaks ties.
    return (-b.probability, tuple(a.key() for a in b.actions))


def prune_tree(tree: ScenarioTree, p_min: float, max_branches: int) -> ScenarioTree:
    """Drop low-probability branches, cap the count, renormalize per vehicle.

    The all-keep branch is exempt from both cuts, so every vehicle retains
    at least that hypothesis; after pruning each vehicle's probabilities
    are renormalized to sum to one.
    """
    pruned = ScenarioTree()
    for sv_id, branches in tree.branches.items():
        if not branches:
            pruned.branches[sv_id] = []
            continue
        keep_branch = next((b for b in branches if b.is_all_keep()), None)
        survivors = [b for b in branches if b.probability >= p_min and not b.is_all_keep()]
        survivors.sort(key=_branch_order)
        budget = max_branches - (1 if keep_branch is not None else 0)
        chosen = survivors[: max(budget, 0)]
        if keep_branch is not None:
            chosen.append(keep_branch)
        chosen.sort(key=_branch_order)
        total = sum(b.probability for b in chosen)
        pruned.branches[sv_id] = [
            BranchHypothesis(
                sv_id=b.sv_id,
                actions=b.actions,
                probability=b.probability / total,
                means=b.means,
                cov_long=b.cov_long,
                maneuvers=b.maneuvers,
                lane_sets=b.lane_sets,
            )
            for b in chosen
        ]
    return pruned
