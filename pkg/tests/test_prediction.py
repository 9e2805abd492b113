"""Scenario-tree prediction: priors, rollouts, pruning, gap gating."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lanegate.hmdp import (
    KEEP,
    Action,
    KinematicParams,
    KinematicState,
    LaneGeometry,
    ManeuverState,
)
from lanegate.prediction import (
    BranchHypothesis,
    PredictionConfig,
    ScenarioTree,
    build_scenario_tree,
    propagate_branch,
    prune_tree,
    sv_action_prior,
)

KIN = KinematicParams()
CFG = PredictionConfig()
DT = 0.4


def make_tree(svs, horizon=3, geom=None, cfg=CFG, **kwargs) -> ScenarioTree:
    geom = geom or LaneGeometry(3)
    return build_scenario_tree(svs, horizon, DT, KIN, geom, cfg, **kwargs)


def sv(x=0.0, v=20.0, lane=2, mode=0, sv_id="sv01"):
    return (sv_id, ManeuverState(lane, mode), KinematicState(x=x, y=0.0, v=v))


# -------------------------------------------------------------------- prior

def test_prior_interior_state_two_lanes():
    # lane 1 of 2, cruise: keep plus three alternatives
    prior = sv_action_prior(ManeuverState(1, 0), LaneGeometry(2), p_keep=0.8)
    assert prior[KEEP] == 0.8
    others = {a: p for a, p in prior.items() if a != KEEP}
    assert set(others) == {Action(0, -1), Action(0, 1), Action(1, 0)}
    assert all(p == pytest.approx(0.2 / 3) for p in others.values())
    assert sum(prior.values()) == pytest.approx(1.0)


def test_prior_edge_state_two_lanes():
    # rightmost lane, already accelerating: only left and mode-down remain
    prior = sv_action_prior(ManeuverState(2, 1), LaneGeometry(2), p_keep=0.8)
    assert prior == {
        Action(-1, 0): pytest.approx(0.1),
        Action(0, -1): pytest.approx(0.1),
        KEEP: pytest.approx(0.8),
    }


def test_prior_degenerate_cases():
    # p_keep = 1 concentrates all mass on keep but keeps the support
    prior = sv_action_prior(ManeuverState(2, 0), LaneGeometry(3), p_keep=1.0)
    assert prior[KEEP] == 1.0
    assert sum(prior.values()) == 1.0
    # latched vehicle mid lane change: no lateral actions in the support
    prior = sv_action_prior(
        ManeuverState(2, 0), LaneGeometry(3), p_keep=0.8, lane_change_in_progress=True
    )
    assert all(a.lat == 0 for a in prior)


@given(
    p_keep=st.floats(min_value=0.0, max_value=1.0),
    lane=st.integers(min_value=1, max_value=4),
    mode=st.sampled_from([-1, 0, 1]),
)
def test_prior_is_a_distribution(p_keep, lane, mode):
    prior = sv_action_prior(ManeuverState(lane, mode), LaneGeometry(4), p_keep)
    assert sum(prior.values()) == pytest.approx(1.0)
    assert all(p >= 0.0 for p in prior.values())


# ------------------------------------------------------------------ rollout

def test_propagate_all_keep_cruise():
    means, covs, maneuvers = propagate_branch(
        KinematicState(x=0.0, y=0.0, v=20.0),
        ManeuverState(2, 0),
        [KEEP, KEEP, KEEP],
        DT,
        KIN,
        LaneGeometry(3),
        CFG,
    )
    assert [m.x for m in means] == [pytest.approx(8.0), pytest.approx(16.0), pytest.approx(24.0)]
    assert all(m.v == 20.0 for m in means)
    assert covs == (pytest.approx(0.25), pytest.approx(0.5), pytest.approx(0.75))
    assert all(m == ManeuverState(2, 0) for m in maneuvers)


def test_propagate_brake_then_keep():
    means, covs, maneuvers = propagate_branch(
        KinematicState(x=0.0, y=0.0, v=20.0),
        ManeuverState(2, 0),
        [Action(0, -1), KEEP],
        DT,
        KIN,
        LaneGeometry(3),
        CFG,
    )
    # decelerating at 3 m/s2 from the first step onward
    assert means[0].v == pytest.approx(18.8)
    assert means[1].v == pytest.approx(17.6)
    assert means[0].x == pytest.approx(20.0 * 0.4 - 0.5 * 3.0 * 0.16)
    assert maneuvers[0].long_mode == -1


def test_propagate_lane_change_occupies_both_lanes_one_step():
    means, _, maneuvers = propagate_branch(
        KinematicState(x=0.0, y=4.0, v=20.0),
        ManeuverState(2, 0),
        [Action(1, 0), KEEP],
        DT,
        KIN,
        LaneGeometry(3),
        CFG,
    )
    assert maneuvers[0].lane == 3
    assert means[0].y == 0.0  # prediction jumps to the target lane center
    tree = make_tree([sv(lane=2)], horizon=2)
    move_right = next(
        b for b in tree.branches["sv01"] if b.actions == (Action(1, 0), KEEP)
    )
    assert move_right.lane_sets == ((2, 3), (3,))


# -------------------------------------------------------------- enumeration

def test_tree_probabilities_sum_to_one_without_pruning():
    tree = make_tree([sv()], horizon=3)
    total = tree.total_probability("sv01")
    assert total == pytest.approx(1.0, abs=1e-12)
    assert all(b.probability > 0 for b in tree.branches["sv01"])


def test_all_keep_branch_probability():
    tree = make_tree([sv(lane=2, mode=0)], horizon=3)
    keep = next(b for b in tree.branches["sv01"] if b.is_all_keep())
    assert keep.probability == pytest.approx(0.8**3)


def test_horizon_validation():
    with pytest.raises(ValueError):
        make_tree([sv()], horizon=0)


def test_prefix_cutoff_matches_enumerate_then_prune():
    svs = [sv(lane=1, sv_id="a"), sv(lane=3, mode=1, sv_id="b")]
    full = prune_tree(make_tree(svs), CFG.p_min, CFG.max_branches)
    fast = prune_tree(
        make_tree(svs, prefix_cutoff=CFG.p_min), CFG.p_min, CFG.max_branches
    )
    for key in ("a", "b"):
        got = [(b.actions, b.probability) for b in fast.branches[key]]
        want = [(b.actions, b.probability) for b in full.branches[key]]
        assert [a for a, _ in got] == [a for a, _ in want]
        for (_, p_got), (_, p_want) in zip(got, want):
            assert p_got == pytest.approx(p_want, abs=1e-12)


def test_latched_vehicle_keeps_lateral_masked_at_first_step():
    tree = make_tree(
        [sv(lane=2)], horizon=2, lane_change_in_progress={"sv01": True}
    )
    assert all(b.actions[0].lat == 0 for b in tree.branches["sv01"])
    # later steps may branch laterally again
    assert any(b.actions[1].lat != 0 for b in tree.branches["sv01"])


# ------------------------------------------------------------------ pruning

def _stub_branch(actions, probability, sv_id="sv01"):
    n = len(actions)
    return BranchHypothesis(
        sv_id=sv_id,
        actions=tuple(actions),
        probability=probability,
        means=tuple(KinematicState(x=8.0 * (h + 1), y=0.0, v=20.0) for h in range(n)),
        cov_long=tuple(0.25 * (h + 1) for h in range(n)),
        maneuvers=tuple(ManeuverState(2, 0) for _ in range(n)),
        lane_sets=tuple((2,) for _ in range(n)),
    )


def test_prune_keeps_all_keep_and_top_survivors():
    tree = ScenarioTree(
        branches={
            "sv01": [
                _stub_branch([Action(0, -1)], 0.5),
                _stub_branch([Action(0, 1)], 0.3),
                _stub_branch([Action(1, 0)], 0.15),
                _stub_branch([Action(-1, 0)], 0.04),  # below the floor
                _stub_branch([KEEP], 0.01),  # all-keep, exempt from both cuts
            ]
        }
    )
    pruned = prune_tree(tree, p_min=0.05, max_branches=3)
    kept = pruned.branches["sv01"]
    assert len(kept) == 3
    actions = {b.actions[0] for b in kept}
    assert actions == {Action(0, -1), Action(0, 1), KEEP}
    assert sum(b.probability for b in kept) == pytest.approx(1.0)
    # renormalization preserves ratios: 0.5 / 0.3 between the survivors
    by_action = {b.actions[0]: b.probability for b in kept}
    assert by_action[Action(0, -1)] / by_action[Action(0, 1)] == pytest.approx(0.5 / 0.3)


def test_prune_tie_break_is_lexicographic():
    tree = ScenarioTree(
        branches={
            "sv01": [
                _stub_branch([Action(1, 0)], 0.3),
                _stub_branch([Action(-1, 0)], 0.3),
                _stub_branch([KEEP], 0.4),
            ]
        }
    )
    pruned = prune_tree(tree, p_min=0.05, max_branches=2)
    kept = pruned.branches["sv01"]
    # budget of one non-keep survivor: the lexicographically first tie wins,
    # and the kept list comes back sorted by descending probability
    assert [b.actions[0] for b in kept] == [KEEP, Action(-1, 0)]


@settings(max_examples=30, deadline=None)
@given(
    lane=st.integers(min_value=1, max_value=3),
    mode=st.sampled_from([-1, 0, 1]),
    p_min=st.floats(min_value=0.0, max_value=0.2),
    max_branches=st.integers(min_value=1, max_value=6),
)
def test_prune_invariants(lane, mode, p_min, max_branches):
    tree = make_tree([sv(lane=lane, mode=mode)], horizon=3)
    pruned = prune_tree(tree, p_min, max_branches)
    kept = pruned.branches["sv01"]
    assert 1 <= len(kept) <= max(max_branches, 1)
    assert any(b.is_all_keep() for b in kept)
    assert sum(b.probability for b in kept) == pytest.approx(1.0)
    probs = [b.probability for b in kept]
    assert probs == sorted(probs, reverse=True)


# --------------------------------------------------------------- gap gating

def test_blocked_lane_removes_lateral_hypotheses_and_renormalizes():
    tree = make_tree(
        [sv(lane=1)], horizon=1, geom=LaneGeometry(2),
        blocked_lanes={"sv01": frozenset({2})},
    )
    by_action = {b.actions[0]: b.probability for b in tree.branches["sv01"]}
    assert Action(1, 0) not in by_action
    # removed mass spreads proportionally: 0.8 / (14/15) and (1/15) / (14/15)
    assert by_action[KEEP] == pytest.approx(6.0 / 7.0)
    assert by_action[Action(0, 1)] == pytest.approx(1.0 / 14.0)
    assert by_action[Action(0, -1)] == pytest.approx(1.0 / 14.0)
    assert sum(by_action.values()) == pytest.approx(1.0)


def test_blocked_lane_only_gates_moves_into_that_lane():
    # blocking lane 3 leaves the move toward lane 1 untouched
    tree = make_tree(
        [sv(lane=2)], horizon=1, blocked_lanes={"sv01": frozenset({3})}
    )
    by_action = {b.actions[0]: b.probability for b in tree.branches["sv01"]}
    assert Action(1, 0) not in by_action
    assert Action(-1, 0) in by_action
    assert sum(by_action.values()) == pytest.approx(1.0)


def test_blocked_lanes_do_not_affect_other_vehicles():
    tree = make_tree(
        [sv(lane=2, sv_id="a"), sv(lane=2, x=50.0, sv_id="b")],
        horizon=1,
        blocked_lanes={"a": frozenset({1, 3})},
    )
    assert all(b.actions[0].lat == 0 for b in tree.branches["a"])
    assert any(b.actions[0].lat != 0 for b in tree.branches["b"])
